//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use pconvex::GridDomain;

/// Grid over `[-1, 1]^n` masked to the open ball of radius `r`.
pub fn ball(n: usize, cells: usize, r: f64) -> Arc<GridDomain> {
    Arc::new(
        GridDomain::centered(n, 1.0, cells)
            .expect("valid box")
            .with_mask(|x| x.iter().map(|v| v * v).sum::<f64>() < r * r)
            .expect("nonempty mask"),
    )
}
