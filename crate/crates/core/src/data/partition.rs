use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{ClassDistribution, LabeledDataset, REFERENCE_CLIENT_SIZES, REFERENCE_PERCENTAGES};
use crate::error::{Error, Result};

/// Round `proportions · total` to integers summing to `total`.
///
/// Every class gets the floor of its share; the leftover units go to the
/// largest fractional parts, ties to the lower class index.
pub fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = proportions.iter().sum();
    if proportions.is_empty() || sum <= 0.0 {
        return vec![0; proportions.len()];
    }
    let exact: Vec<f64> = proportions.iter().map(|p| p / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    // stable sort keeps the lower index first among equal remainders
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra)
    });
    for &c in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum PartitionMode {
    ReferenceMixture,
    Dirichlet { alpha: f64 },
    Custom,
}

/// How many samples of each class every client receives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub clients: Vec<ClassDistribution>,
    pub mode: PartitionMode,
}

impl PartitionPlan {
    pub fn custom(clients: Vec<ClassDistribution>) -> Result<Self> {
        let plan = Self {
            clients,
            mode: PartitionMode::Custom,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// The three reference clients with their label percentages and sizes.
    pub fn reference_mixture() -> Self {
        let clients = REFERENCE_PERCENTAGES
            .iter()
            .zip(REFERENCE_CLIENT_SIZES)
            .map(|(pct, n)| ClassDistribution::from_weights(pct, n).expect("reference percentages are valid"))
            .collect();
        Self {
            clients,
            mode: PartitionMode::ReferenceMixture,
        }
    }

    /// Per-client proportions drawn from a symmetric Dirichlet(α).
    pub fn dirichlet(alpha: f64, num_classes: usize, totals: &[usize], seed: u64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::param(format!("dirichlet alpha must be positive, got {alpha}")));
        }
        if num_classes < 2 {
            return Err(Error::param("dirichlet partition needs at least two classes"));
        }
        // normalised independent Gamma(α, 1) draws are Dirichlet(α) distributed
        let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::param(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clients = totals
            .iter()
            .map(|&n| {
                let mut p: Vec<f64> = (0..num_classes).map(|_| gamma.sample(&mut rng)).collect();
                if p.iter().all(|&v| v == 0.0) {
                    // every draw underflowed at tiny alpha; fall back to a one-class client
                    p[0] = 1.0;
                }
                ClassDistribution::from_weights(&p, n)
            })
            .collect::<Result<_>>()?;
        let plan = Self {
            clients,
            mode: PartitionMode::Dirichlet { alpha },
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(Error::param("partition plan has no clients"));
        }
        if let PartitionMode::Dirichlet { alpha } = self.mode {
            if alpha.is_nan() || alpha <= 0.0 {
                return Err(Error::param("dirichlet alpha must be positive"));
            }
        }
        let c = self.clients[0].num_classes();
        if self.clients.iter().any(|d| d.num_classes() != c) {
            return Err(Error::param("clients disagree on the number of classes"));
        }
        Ok(())
    }

    /// Per-client, per-class sample demands.
    pub fn demands(&self) -> Vec<Vec<usize>> {
        self.clients.iter().map(ClassDistribution::counts).collect()
    }

    /// Total demand per class across all clients.
    pub fn class_totals(&self) -> Vec<usize> {
        let demands = self.demands();
        let c = demands.first().map_or(0, Vec::len);
        (0..c).map(|k| demands.iter().map(|d| d[k]).sum()).collect()
    }
}

fn shuffled_by_class(source: &LabeledDataset, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut by_class = source.indices_by_class();
    for idx in &mut by_class {
        idx.shuffle(rng);
    }
    by_class
}

/// Source indices handed to each client; disjoint across clients.
pub fn partition_indices(source: &LabeledDataset, plan: &PartitionPlan, seed: u64) -> Result<Vec<Vec<usize>>> {
    plan.validate()?;
    if plan.clients[0].num_classes() != source.num_classes() {
        return Err(Error::param(format!(
            "plan has {} classes, source has {}",
            plan.clients[0].num_classes(),
            source.num_classes()
        )));
    }
    let totals = plan.class_totals();
    for (class, (&needed, &available)) in totals.iter().zip(source.class_counts()).enumerate() {
        if needed > available {
            return Err(Error::Capacity {
                class,
                needed,
                available,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = shuffled_by_class(source, &mut rng);
    let mut cursor = vec![0; source.num_classes()];
    let mut out = Vec::with_capacity(plan.clients.len());
    for demand in plan.demands() {
        let mut idx = Vec::with_capacity(demand.iter().sum());
        for (class, &n) in demand.iter().enumerate() {
            idx.extend_from_slice(&by_class[class][cursor[class]..cursor[class] + n]);
            cursor[class] += n;
        }
        idx.shuffle(&mut rng);
        out.push(idx);
    }
    Ok(out)
}

pub fn partition(source: &LabeledDataset, plan: &PartitionPlan, seed: u64) -> Result<Vec<LabeledDataset>> {
    Ok(partition_indices(source, plan, seed)?
        .iter()
        .map(|idx| source.subset(idx))
        .collect())
}

/// Indices of a class-balanced draw of `⌊size / C⌋` samples per class.
pub fn build_proxy_indices(source: &LabeledDataset, size: usize, seed: u64) -> Result<Vec<usize>> {
    let per_class = size / source.num_classes();
    for (class, &available) in source.class_counts().iter().enumerate() {
        if available < per_class {
            return Err(Error::Capacity {
                class,
                needed: per_class,
                available,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = shuffled_by_class(source, &mut rng);
    let mut idx: Vec<usize> = by_class.iter().flat_map(|c| c[..per_class].iter().copied()).collect();
    idx.shuffle(&mut rng);
    Ok(idx)
}

pub fn build_proxy(source: &LabeledDataset, size: usize, seed: u64) -> Result<LabeledDataset> {
    Ok(source.subset(&build_proxy_indices(source, size, seed)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(counts: &[usize]) -> LabeledDataset {
        let mut labels = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat_n(c, n));
        }
        let features = (0..labels.len()).map(|i| i as f64).collect();
        LabeledDataset::new(features, labels, 1, counts.len()).unwrap()
    }

    #[test]
    fn remainder_rounding_examples() {
        assert_eq!(largest_remainder(&[0.5, 0.5], 10), vec![5, 5]);
        assert_eq!(largest_remainder(&[1.0 / 3.0; 3], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 10), vec![0, 0]);
    }

    #[test]
    fn identity_partition_is_a_permutation() {
        let src = pool(&[6, 3, 1]);
        let plan = PartitionPlan::custom(vec![ClassDistribution::from_weights(&[6.0, 3.0, 1.0], 10).unwrap()]).unwrap();
        let mut idx = partition_indices(&src, &plan, 1).unwrap().remove(0);
        idx.sort_unstable();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn halves_of_balanced_source() {
        let src = pool(&[10, 10]);
        let half = ClassDistribution::uniform(2, 10).unwrap();
        let plan = PartitionPlan::custom(vec![half.clone(), half]).unwrap();
        let idx = partition_indices(&src, &plan, 9).unwrap();
        let parts = partition(&src, &plan, 9).unwrap();
        assert!(parts.iter().all(|p| p.class_counts() == [5, 5]));
        assert!(idx[0].iter().all(|i| !idx[1].contains(i)));
    }

    #[test]
    fn capacity_error_names_class() {
        let src = pool(&[10, 2]);
        let plan = PartitionPlan::custom(vec![ClassDistribution::uniform(2, 10).unwrap()]).unwrap();
        let err = partition(&src, &plan, 0).unwrap_err();
        assert!(matches!(err, Error::Capacity { class: 1, needed: 5, available: 2 }));
    }

    #[test]
    fn proxy_floor_rule() {
        let src = pool(&[300, 300, 300, 300, 300]);
        assert_eq!(build_proxy(&src, 1000, 0).unwrap().class_counts(), &[200; 5]);
        assert_eq!(build_proxy(&src, 5, 0).unwrap().class_counts(), &[1; 5]);
        assert_eq!(build_proxy(&src, 7, 0).unwrap().len(), 5);
        assert!(matches!(
            build_proxy(&pool(&[5, 1]), 4, 0),
            Err(Error::Capacity { class: 1, .. })
        ));
    }

    #[test]
    fn dirichlet_plan_is_seeded() {
        let a = PartitionPlan::dirichlet(0.5, 5, &[100, 200], 4).unwrap();
        let b = PartitionPlan::dirichlet(0.5, 5, &[100, 200], 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.demands()[1].iter().sum::<usize>(), 200);
        assert!(PartitionPlan::dirichlet(0.0, 5, &[100], 4).is_err());
    }

    #[test]
    fn empty_plan_rejected() {
        assert!(PartitionPlan::custom(vec![]).is_err());
    }
}
