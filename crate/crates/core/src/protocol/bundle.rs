use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, PartitionSpec};
use super::seeds::derive_seed;
use crate::data::{
    build_proxy_indices, load_csv, partition_indices, raised_cosine_prototypes, synth_generate_counts,
    ClassDistribution, LabeledDataset, PartitionPlan,
};
use crate::error::{Error, Result};

/// Which source rows ended up in which split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub clients: Vec<Vec<usize>>,
    pub proxy: Vec<usize>,
    pub test: Vec<usize>,
}

/// Private client sets, the shared proxy, and the shared held-out test set.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub clients: Vec<LabeledDataset>,
    pub proxy: LabeledDataset,
    pub test: LabeledDataset,
    pub splits: Option<SplitIndices>,
}

impl DataBundle {
    pub fn new(clients: Vec<LabeledDataset>, proxy: LabeledDataset, test: LabeledDataset) -> Result<Self> {
        let bundle = Self {
            clients,
            proxy,
            test,
            splits: None,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(Error::config("data bundle has no clients"));
        }
        let (len, c) = (self.proxy.sample_len(), self.proxy.num_classes());
        for d in self.clients.iter().chain([&self.test]) {
            if d.sample_len() != len || d.num_classes() != c {
                return Err(Error::shape("all splits must share sample length and class count"));
            }
        }
        if let Some(k) = self.clients.iter().position(LabeledDataset::is_empty) {
            return Err(Error::config(format!("client {k} has no private data")));
        }
        Ok(())
    }

    /// Build every split from the configured source.
    ///
    /// The test set is drawn first (class-balanced), then the balanced proxy
    /// from what remains, then the client partition from the rest, so all
    /// splits are disjoint.
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let plan = partition_plan(cfg)?;
        let c = cfg.num_classes;
        let proxy_per_class = cfg.proxy_size / c;
        let source = match &cfg.data {
            DataSource::Synthetic => {
                let prototypes = raised_cosine_prototypes(c, cfg.sample_len, cfg.bump_width, cfg.bump_spacing);
                let counts: Vec<usize> = plan
                    .class_totals()
                    .iter()
                    .map(|n| n + proxy_per_class + cfg.test_per_class)
                    .collect();
                synth_generate_counts(&prototypes, cfg.noise_scale, &counts, derive_seed(cfg.seed, "data", 0))?
            }
            DataSource::Csv(path) => load_csv(path, cfg.sample_len, c, cfg.csv_header)?,
        };
        Self::split(&source, &plan, cfg)
    }

    fn split(source: &LabeledDataset, plan: &PartitionPlan, cfg: &ExperimentConfig) -> Result<Self> {
        let c = cfg.num_classes;
        let all: Vec<usize> = (0..source.len()).collect();

        let test = build_proxy_indices(source, cfg.test_per_class * c, derive_seed(cfg.seed, "test-split", 0))?;
        let rest1 = remove(&all, &test);

        let pool1 = source.subset(&rest1);
        let proxy_local = build_proxy_indices(&pool1, cfg.proxy_size, derive_seed(cfg.seed, "proxy-split", 0))?;
        let proxy: Vec<usize> = proxy_local.iter().map(|&i| rest1[i]).collect();
        let rest2 = remove(&rest1, &proxy);

        let pool2 = source.subset(&rest2);
        let client_local = partition_indices(&pool2, plan, derive_seed(cfg.seed, "client-split", 0))?;
        let clients: Vec<Vec<usize>> = client_local
            .iter()
            .map(|idx| idx.iter().map(|&i| rest2[i]).collect())
            .collect();

        let bundle = Self {
            clients: clients.iter().map(|idx| source.subset(idx)).collect(),
            proxy: source.subset(&proxy),
            test: source.subset(&test),
            splits: Some(SplitIndices { clients, proxy, test }),
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

fn remove(from: &[usize], taken: &[usize]) -> Vec<usize> {
    let mut mask = vec![false; from.iter().copied().max().map_or(0, |m| m + 1)];
    for &t in taken {
        mask[t] = true;
    }
    from.iter().copied().filter(|&i| !mask[i]).collect()
}

/// The configured partition plan.
pub fn partition_plan(cfg: &ExperimentConfig) -> Result<PartitionPlan> {
    match cfg.partition {
        PartitionSpec::Reference => {
            let mut plan = PartitionPlan::reference_mixture();
            for (d, &n) in plan.clients.iter_mut().zip(&cfg.client_sizes) {
                *d = ClassDistribution::new(d.proportions().to_vec(), n)?;
            }
            Ok(plan)
        }
        PartitionSpec::Dirichlet(alpha) => PartitionPlan::dirichlet(
            alpha,
            cfg.num_classes,
            &cfg.client_sizes,
            derive_seed(cfg.seed, "dirichlet", 0),
        ),
        PartitionSpec::Custom => PartitionPlan::custom(
            cfg.client_weights
                .iter()
                .zip(&cfg.client_sizes)
                .map(|(w, &n)| ClassDistribution::from_weights(w, n))
                .collect::<Result<_>>()?,
        ),
    }
}
