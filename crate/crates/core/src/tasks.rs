//! Synthetic heterogeneous federations.
//!
//! Each client holds samples from exactly two classes, its sample count is
//! drawn from the discrete uniform `U(M, 2M)`, and its data is split in half
//! into a support set and a query set. Inputs are class-conditional Gaussians:
//! every class gets a mean drawn once from `N(0, s²I)` and samples add unit
//! noise. The server holds a separate pool spanning all classes.
//!
//! Random draws happen in a fixed stage order (class means, client classes,
//! client sizes, samples, splits, client selection, server pool), each stage
//! with its own stream from [`crate::rng`].

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::rng::{gaussian_vec, stream, Rng, Stage};

/// Penalty parameter assigned to clients before any override.
pub const DEFAULT_RHO: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub num_clients: usize,
    /// Lower bound `M` of the per-client sample count `D_i ~ U(M, 2M)`.
    pub min_samples: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Fraction of clients used for training; the rest are held out.
    pub train_fraction: f64,
    pub server_samples: usize,
    /// Standard deviation `s` of the class means.
    pub class_scale: f64,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            num_clients: 50,
            min_samples: 20,
            num_classes: 10,
            feature_dim: 10,
            train_fraction: 0.8,
            server_samples: 500,
            class_scale: 1.0,
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::invalid("num_clients must be >= 1"));
        }
        if self.min_samples < 2 {
            return Err(Error::invalid("min_samples (M) must be >= 2"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes must be >= 2"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be >= 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::invalid("train_fraction must be in (0, 1]"));
        }
        if self.server_samples == 0 {
            return Err(Error::invalid("server_samples must be >= 1"));
        }
        if !(self.class_scale >= 0.0 && self.class_scale.is_finite()) {
            return Err(Error::invalid("class_scale must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn num_train(&self) -> usize {
        ((self.train_fraction * self.num_clients as f64).round() as usize).clamp(1, self.num_clients)
    }
}

/// Estimator step schedule `δ_t = scale / (slope · t + offset)`, shared by all
/// clients and indexed by the global round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeltaSchedule {
    pub scale: f64,
    pub slope: f64,
    pub offset: f64,
}

impl Default for DeltaSchedule {
    fn default() -> Self {
        DeltaSchedule {
            scale: 1.0,
            slope: 10.0,
            offset: 100.0,
        }
    }
}

impl DeltaSchedule {
    pub fn at(&self, round: usize) -> f64 {
        self.scale / (self.slope * round as f64 + self.offset)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.offset > 0.0 && self.slope >= 0.0) {
            return Err(Error::Validation(
                "delta schedule needs scale > 0, offset > 0, slope >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub id: usize,
    pub support: Dataset,
    pub query: Dataset,
    /// Aggregation weight `w_i = D_i / Σ_j D_j` within the client's group.
    #[serde(rename = "w")]
    pub weight: f64,
    pub rho: f64,
}

impl ClientRecord {
    pub fn num_samples(&self) -> usize {
        self.support.len() + self.query.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Federation {
    pub config: FederationConfig,
    pub train: Vec<ClientRecord>,
    pub test: Vec<ClientRecord>,
    pub server_data: Dataset,
}

impl Federation {
    /// Uniform penalty or one value per training client (ascending id).
    pub fn set_rho(&mut self, rho: &[f64]) -> Result<()> {
        match rho {
            [r] => self.train.iter_mut().chain(self.test.iter_mut()).for_each(|c| c.rho = *r),
            list if list.len() == self.train.len() => {
                for (c, r) in self.train.iter_mut().zip(list) {
                    c.rho = *r;
                }
            }
            list => {
                return Err(Error::Validation(format!(
                    "rho list has {} entries but there are {} training clients",
                    list.len(),
                    self.train.len()
                )))
            }
        }
        if self
            .train
            .iter()
            .chain(&self.test)
            .any(|c| !(c.rho > 0.0 && c.rho.is_finite()))
        {
            return Err(Error::Validation("rho must be > 0".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&FederationFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: FederationFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Role {
    Train,
    Test,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClientEntry {
    id: usize,
    role: Role,
    support: Dataset,
    query: Dataset,
    w: f64,
    rho: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FederationFile {
    config: FederationConfig,
    clients: Vec<ClientEntry>,
    server_data: Dataset,
}

impl From<&Federation> for FederationFile {
    fn from(f: &Federation) -> Self {
        let entry = |c: &ClientRecord, role| ClientEntry {
            id: c.id,
            role,
            support: c.support.clone(),
            query: c.query.clone(),
            w: c.weight,
            rho: c.rho,
        };
        FederationFile {
            config: f.config.clone(),
            clients: f
                .train
                .iter()
                .map(|c| entry(c, Role::Train))
                .chain(f.test.iter().map(|c| entry(c, Role::Test)))
                .collect(),
            server_data: f.server_data.clone(),
        }
    }
}

impl TryFrom<FederationFile> for Federation {
    type Error = Error;
    fn try_from(file: FederationFile) -> Result<Self> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for e in file.clients {
            let rec = ClientRecord {
                id: e.id,
                support: e.support,
                query: e.query,
                weight: e.w,
                rho: e.rho,
            };
            match e.role {
                Role::Train => train.push(rec),
                Role::Test => test.push(rec),
            }
        }
        if train.is_empty() {
            return Err(Error::invalid("federation file has no training clients"));
        }
        let wsum: f64 = train.iter().map(|c| c.weight).sum();
        if (wsum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("training weights sum to {wsum}, expected 1")));
        }
        Ok(Federation {
            config: file.config,
            train,
            test,
            server_data: file.server_data,
        })
    }
}

/// Seeded uniform permutation split at `floor(|D|/2)`: the support set gets
/// the first half, the query set the remainder.
pub fn split_support_query(data: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    if data.len() < 2 {
        return Err(Error::invalid("need at least 2 samples to split"));
    }
    let mut rng = crate::rng::substream(seed, Stage::Splits, 0);
    let mut perm: Vec<usize> = (0..data.len()).collect();
    perm.shuffle(&mut rng);
    let half = data.len() / 2;
    Ok((data.select(&perm[..half])?, data.select(&perm[half..])?))
}

fn draw_sample(rng: &mut Rng, mean: &[f64], class: usize) -> Sample {
    let noise = gaussian_vec(rng, mean.len(), 1.0);
    Sample::new(mean.iter().zip(noise).map(|(m, e)| m + e).collect(), class as f64)
}

fn assign_weights(clients: &mut [ClientRecord]) {
    let total: usize = clients.iter().map(ClientRecord::num_samples).sum();
    for c in clients.iter_mut() {
        c.weight = c.num_samples() as f64 / total as f64;
    }
}

/// Generates `(train clients, test clients, server pool)`; fully determined
/// by the config, seed included.
pub fn generate_federation(config: &FederationConfig) -> Result<Federation> {
    config.validate()?;
    let seed = config.seed;
    let k = config.num_classes;
    let d = config.feature_dim;

    let mut rng = stream(seed, Stage::ClassMeans);
    let means: Vec<Vec<f64>> = (0..k).map(|_| gaussian_vec(&mut rng, d, config.class_scale)).collect();

    let mut rng = stream(seed, Stage::ClientClasses);
    let pairs: Vec<[usize; 2]> = (0..config.num_clients)
        .map(|_| {
            let v = index::sample(&mut rng, k, 2);
            [v.index(0), v.index(1)]
        })
        .collect();

    let mut rng = stream(seed, Stage::ClientSizes);
    let m = config.min_samples;
    let sizes: Vec<usize> = (0..config.num_clients).map(|_| rng.random_range(m..=2 * m)).collect();

    // The first two samples cover both classes so every label set has size 2.
    let mut rng = stream(seed, Stage::Samples);
    let mut local = Vec::with_capacity(config.num_clients);
    for (pair, &size) in pairs.iter().zip(&sizes) {
        let samples = (0..size)
            .map(|j| {
                let class = if j < 2 { pair[j] } else { pair[rng.random_range(0..2)] };
                draw_sample(&mut rng, &means[class], class)
            })
            .collect();
        local.push(Dataset::new(samples)?);
    }

    let mut rng = stream(seed, Stage::Splits);
    let mut clients = Vec::with_capacity(config.num_clients);
    for (id, data) in local.iter().enumerate() {
        let (support, query) = split_support_query(data, rng.random())?;
        clients.push(ClientRecord {
            id,
            support,
            query,
            weight: 0.0,
            rho: DEFAULT_RHO,
        });
    }

    let mut rng = stream(seed, Stage::Selection);
    let mut order: Vec<usize> = (0..config.num_clients).collect();
    order.shuffle(&mut rng);
    let mut is_train = vec![false; config.num_clients];
    for &i in &order[..config.num_train()] {
        is_train[i] = true;
    }
    let (mut train, mut test): (Vec<_>, Vec<_>) = clients.into_iter().partition(|c| is_train[c.id]);
    assign_weights(&mut train);
    if !test.is_empty() {
        assign_weights(&mut test);
    }

    let mut rng = stream(seed, Stage::ServerPool);
    let server = (0..config.server_samples)
        .map(|j| {
            // cycle through classes first so every class is present
            let class = if j < k { j } else { rng.random_range(0..k) };
            draw_sample(&mut rng, &means[class], class)
        })
        .collect();

    Ok(Federation {
        config: config.clone(),
        train,
        test,
        server_data: Dataset::new(server)?,
    })
}
