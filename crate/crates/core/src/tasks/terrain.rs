use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng as _;

use crate::rng::SeedPath;
use crate::state_costs::PointCloud;
use crate::{GsbmError, Result};

const BOUND: f64 = 5.0;

/// Height of the synthetic terrain: two ridges crossing a saddle, with a
/// gentle tilt so the corners sit at different heights.
pub fn terrain_height(x: f64, y: f64) -> f64 {
    let ridges = 1.2 * (-(x - y - 2.0).powi(2) / 3.0).exp() + 1.2 * (-(x - y + 2.0).powi(2) / 3.0).exp();
    let saddle = 0.06 * (x * x - y * y);
    let tilt = 0.1 * (x + y);
    let bumps = 0.3 * (0.8 * x).sin() * (0.7 * y).cos();
    (ridges + saddle + tilt + bumps - 1.0).clamp(-BOUND, BOUND)
}

/// Deterministic point cloud on the terrain surface over `[−5, 5]²`.
pub fn synth_terrain(seed: u64, n_points: usize) -> Result<PointCloud> {
    if n_points < 1000 {
        return Err(GsbmError::InvalidArgument(format!(
            "terrain needs at least 1000 points, got {n_points}"
        )));
    }
    let mut rng = SeedPath::new(seed).named("terrain").rng();
    let points = (0..n_points)
        .map(|_| {
            let x = rng.gen_range(-BOUND..BOUND);
            let y = rng.gen_range(-BOUND..BOUND);
            [x, y, terrain_height(x, y)]
        })
        .collect();
    PointCloud::new(points)
}

/// Reads a whitespace-separated XYZ file (one point per line).
pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    PointCloud::load(path)
}

/// Writes one `x y z` line per point with round-trip precision.
pub fn save_point_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in cloud.points() {
        writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
    }
    w.flush()?;
    Ok(())
}
