//! Seeded synthetic datasets for scenarios and demos.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::linkage::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Register-style data held by a data owner.
    Owner,
    /// Study data collected by the project.
    Project,
}

fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(label.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// `rows` distinct identifiers drawn from a pool of `2 * rows`, so two sides
/// generated with the same seed overlap on about half their rows.
pub fn dataset(seed: u64, side: Side, rows: usize) -> Dataset {
    let label = match side {
        Side::Owner => "owner",
        Side::Project => "project",
    };
    let mut rng = rng_for(seed, label);
    let pool = (2 * rows).max(1);
    let mut ids: Vec<usize> = sample(&mut rng, pool, rows.min(pool)).into_vec();
    ids.sort_unstable();
    let mut ds = match side {
        Side::Owner => Dataset::new(vec!["income".into(), "region".into()]),
        Side::Project => Dataset::new(vec!["genotype".into(), "visits".into()]),
    };
    for id in ids {
        let link_id = format!("P{id:06}");
        match side {
            Side::Owner => {
                let income = rng.gen_range(12..120) * 1000;
                let region = ["north", "east", "south", "west"][rng.gen_range(0..4)];
                ds.push(link_id, &[&income.to_string(), region]);
            }
            Side::Project => {
                let genotype = ["AA", "AG", "GG"][rng.gen_range(0..3)];
                let visits = rng.gen_range(0..40);
                ds.push(link_id, &[genotype, &visits.to_string()]);
            }
        }
    }
    ds
}
