use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::{cmp_desc, RngStream, StreamTag};

use super::interactions::{Interaction, InteractionLog};

/// Spread of the per-item popularity offset, in units of the affinity std.
const POPULARITY_SCALE: f64 = 0.5;
/// Pairwise noise added before thresholding.
const NOISE_SCALE: f64 = 0.5;
const TIME_ORIGIN: u64 = 1_500_000_000;
const TIME_SPAN: u64 = 100_000_000;

/// Latent-factor interaction generator.
///
/// Users and items get standard normal factors; each pair's affinity is
/// `<u, i> / sqrt(latent_dim) + popularity_i + noise`. The
/// `round(density * n_users * n_items)` highest-affinity pairs become
/// interactions with uniformly random timestamps.
pub fn generate_synthetic(
    n_users: usize,
    n_items: usize,
    latent_dim: usize,
    density: f64,
    seed: u64,
) -> Result<InteractionLog> {
    if !(density > 0.0 && density < 1.0) {
        return Err(Error::domain(format!("density {density} must lie in (0, 1)")));
    }
    if latent_dim == 0 {
        return Err(Error::config("latent_dim must be at least 1"));
    }
    let target = (density * (n_users * n_items) as f64).round() as usize;
    if target == 0 {
        return Err(Error::domain("parameters produce zero interactions"));
    }

    let mut rng = RngStream::new(seed, StreamTag::Synthetic);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.normal()).collect() };
    let users = draw(n_users * latent_dim);
    let items = draw(n_items * latent_dim);
    let popularity = draw(n_items);
    let noise = draw(n_users * n_items);

    let norm = (latent_dim as f64).sqrt();
    let mut affinity: Vec<(f64, usize)> = Vec::with_capacity(n_users * n_items);
    for u in 0..n_users {
        let uv = &users[u * latent_dim..(u + 1) * latent_dim];
        for i in 0..n_items {
            let iv = &items[i * latent_dim..(i + 1) * latent_dim];
            let dot: f64 = uv.iter().zip(iv).map(|(a, b)| a * b).sum();
            let k = u * n_items + i;
            affinity.push((
                dot / norm + POPULARITY_SCALE * popularity[i] + NOISE_SCALE * noise[k],
                k,
            ));
        }
    }
    // descending affinity, ties by pair index
    affinity.sort_by(|a, b| cmp_desc(a.0, b.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = affinity[..target].iter().map(|&(_, k)| k).collect();
    chosen.sort_unstable();

    let mut time_rng = RngStream::keyed(seed, StreamTag::Synthetic, &[1]);
    let records = chosen
        .into_iter()
        .map(|k| Interaction {
            user: format!("u{}", k / n_items),
            item: format!("i{}", k % n_items),
            timestamp: TIME_ORIGIN + (time_rng.uniform() * TIME_SPAN as f64) as u64,
        })
        .collect();
    Ok(InteractionLog { records })
}

/// Serializes a log in the comma-separated ingest format.
pub fn write_interactions(log: &InteractionLog, path: &Path) -> Result<()> {
    let mut s = String::with_capacity(log.len() * 24);
    for r in &log.records {
        let _ = writeln!(s, "{},{},{}", r.user, r.item, r.timestamp);
    }
    write_atomic(path, s.as_bytes())
}
