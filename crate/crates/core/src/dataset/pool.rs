use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::profile::Profile;
use super::schema::TaskSpec;
use super::DatasetError;

pub const PRETEST_SIZE: usize = 100;
pub const MINITEST_SIZE: usize = 20;
pub const CYCLES: usize = 5;
pub const POSTTEST_SIZE: usize = PRETEST_SIZE;
/// Distinct profiles one session presents (post-test reuses the pre-test).
pub const SESSION_PROFILES: usize = PRETEST_SIZE + CYCLES * MINITEST_SIZE;

/// Which pool profiles each assessment phase presents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub pretest: Vec<String>,
    pub minitests: Vec<Vec<String>>,
    pub posttest: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePool {
    pub task: TaskSpec,
    pub profiles: Vec<Profile>,
    pub partition: Partition,
}

impl ProfilePool {
    pub fn profile(&self, id: &str) -> Option<&Profile> {
        self.profiles.iter().find(|p| p.profile_id == id)
    }

    /// Checks the pool's structural invariants after loading it from disk.
    pub fn validate(&self) -> Result<(), DatasetError> {
        self.task.validate()?;
        let mut ids = BTreeSet::new();
        for p in &self.profiles {
            p.validate(&self.task)?;
            if !ids.insert(p.profile_id.as_str()) {
                return Err(DatasetError::DuplicateId(p.profile_id.clone()));
            }
        }
        let part = &self.partition;
        let bad = |msg: String| Err(DatasetError::Partition(msg));
        if part.pretest.len() != PRETEST_SIZE {
            return bad(format!("pre-test block has {} ids", part.pretest.len()));
        }
        if part.minitests.len() != CYCLES || part.minitests.iter().any(|b| b.len() != MINITEST_SIZE) {
            return bad("mini-test blocks must be 5 x 20".into());
        }
        if part.posttest != part.pretest {
            return bad("post-test block must repeat the pre-test block".into());
        }
        let mut used = BTreeSet::new();
        for id in part.pretest.iter().chain(part.minitests.iter().flatten()) {
            if !ids.contains(id.as_str()) {
                return bad(format!("unknown profile id `{id}`"));
            }
            if !used.insert(id.as_str()) {
                return bad(format!("profile `{id}` appears in two blocks"));
            }
        }
        Ok(())
    }

    /// `(privileged, unprivileged)` profile counts.
    pub fn group_sizes(&self) -> (usize, usize) {
        let privileged = self.profiles.iter().filter(|p| p.z == 1).count();
        (privileged, self.profiles.len() - privileged)
    }
}

/// Per-stratum targets for a pool of `size` profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StratumTargets {
    pub privileged: usize,
    pub unprivileged: usize,
    pub privileged_positive: usize,
    pub unprivileged_positive: usize,
}

impl StratumTargets {
    /// Exact equal base rates across groups force the positive counts onto
    /// multiples of `(n_priv, n_unpriv) / gcd`. The privileged count may move
    /// one profile off its rounded target when that brings the positive total
    /// closer to the task quota.
    pub fn for_task(task: &TaskSpec, size: usize) -> Option<Self> {
        let rounded = (task.privileged_share * size as f64).round() as usize;
        let target_pos = task.positive_quota * size as f64;
        let mut best: Option<(f64, usize, Self)> = None;
        for privileged in [rounded, rounded.saturating_sub(1), rounded + 1] {
            if privileged == 0 || privileged >= size {
                continue;
            }
            let unprivileged = size - privileged;
            let g = gcd(privileged, unprivileged);
            let (up, uu) = (privileged / g, unprivileged / g);
            // k = 0 and k = g give single-class pools
            for k in 1..g {
                let total = k * (up + uu);
                let miss = (total as f64 - target_pos).abs();
                let drift = privileged.abs_diff(rounded);
                let better = match &best {
                    None => true,
                    Some((m, d, _)) => miss < *m || (miss == *m && drift < *d),
                };
                if better {
                    best = Some((
                        miss,
                        drift,
                        Self {
                            privileged,
                            unprivileged,
                            privileged_positive: k * up,
                            unprivileged_positive: k * uu,
                        },
                    ));
                }
            }
        }
        best.map(|(_, _, t)| t)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Draws a `task.pool_size` pool with identical label base rates in both
/// groups and partitions it into assessment blocks.
///
/// Deterministic for a fixed seed and input set (input order is irrelevant).
pub fn sample_pool(profiles: &[Profile], task: &TaskSpec, seed: u64) -> Result<ProfilePool, DatasetError> {
    task.validate()?;
    let mut ids = BTreeSet::new();
    for p in profiles {
        p.validate(task)?;
        if !ids.insert(p.profile_id.as_str()) {
            return Err(DatasetError::DuplicateId(p.profile_id.clone()));
        }
    }
    let targets = StratumTargets::for_task(task, task.pool_size).ok_or_else(|| {
        DatasetError::Schema(format!(
            "no pool of {} profiles can have equal base rates in both groups",
            task.pool_size
        ))
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wanted = [
        (1u8, 1u8, targets.privileged_positive),
        (1, 0, targets.privileged - targets.privileged_positive),
        (0, 1, targets.unprivileged_positive),
        (0, 0, targets.unprivileged - targets.unprivileged_positive),
    ];
    let mut cells: Vec<Vec<&Profile>> = Vec::with_capacity(4);
    for (z, y, needed) in wanted {
        let mut cell: Vec<&Profile> = profiles.iter().filter(|p| p.z == z && p.y == y).collect();
        if cell.len() < needed {
            return Err(DatasetError::InsufficientStratum {
                z,
                y,
                needed,
                available: cell.len(),
            });
        }
        cell.sort_by(|a, b| a.profile_id.cmp(&b.profile_id));
        cell.shuffle(&mut rng);
        cell.truncate(needed);
        cells.push(cell);
    }

    // Spread every stratum evenly along the pool order so that any contiguous
    // block carries roughly the pool's mix of groups and labels.
    let mut ordered: Vec<(f64, usize, &Profile)> = Vec::with_capacity(task.pool_size);
    for (c, cell) in cells.iter().enumerate() {
        let m = cell.len() as f64;
        for (rank, p) in cell.iter().enumerate() {
            ordered.push(((rank as f64 + 0.5) / m, c, p));
        }
    }
    ordered.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let profiles: Vec<Profile> = ordered.into_iter().map(|(_, _, p)| p.clone()).collect();

    let ids: Vec<String> = profiles.iter().map(|p| p.profile_id.clone()).collect();
    let pretest = ids[..PRETEST_SIZE].to_vec();
    let minitests = (0..CYCLES)
        .map(|c| {
            let start = PRETEST_SIZE + c * MINITEST_SIZE;
            ids[start..start + MINITEST_SIZE].to_vec()
        })
        .collect();
    let partition = Partition {
        posttest: pretest.clone(),
        pretest,
        minitests,
    };
    Ok(ProfilePool {
        task: task.clone(),
        profiles,
        partition,
    })
}
