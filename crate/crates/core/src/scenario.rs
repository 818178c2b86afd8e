//! Problem instances: topology, user population, channel realizations and
//! every numerical constant the solver needs.
//!
//! A [`Scenario`] describes one frame. Channel gains are fixed for the frame
//! and are generated deterministically from a `(config, seed)` pair. Random
//! draws are keyed per entity (user, base station, link direction), so growing
//! the subcarrier count or the number of users keeps every previously drawn
//! quantity unchanged. Sweeps over those axes therefore compare paired
//! instances.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

/// Users and teleoperators closer than this to a base station are treated as
/// being at this distance.
pub const MIN_DISTANCE_KM: f64 = 0.01;

const MAX_PLACEMENT_ATTEMPTS: usize = 100_000;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Power gain of a link: a unit-mean fading power sample scaled by the
/// reference loss at 1 km and by `distance^-exponent`.
pub fn path_gain(fading: f64, distance_km: f64, exponent: f64, reference_loss_db: f64) -> f64 {
    fading * 10f64.powf(-reference_loss_db / 10.0) * distance_km.powf(-exponent)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NfSpec {
    pub id: usize,
    /// Processing coefficient per base station. Index 0 is the MBS; when the
    /// vector is shorter than the number of base stations its last entry
    /// applies to the remaining ones.
    pub processing_coefficient_per_bs: Vec<f64>,
}

impl NfSpec {
    pub fn coefficient(&self, bs: usize) -> f64 {
        broadcast(&self.processing_coefficient_per_bs, bs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub id: usize,
    pub e2e_delay_max_s: f64,
    pub payload_bits: f64,
    pub chain: Vec<NfSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeleoperatorPlacement {
    /// Each teleoperator attaches to a uniformly chosen base station that
    /// still has a free downlink subcarrier per attached teleoperator.
    Uniform,
    /// Each teleoperator attaches to its tactile user's base station.
    Home,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_sbs: usize,
    pub coverage_area_km2: f64,
    pub num_ul_subcarriers: usize,
    pub num_dl_subcarriers: usize,
    pub ul_bandwidth_hz: f64,
    pub dl_bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub pathloss_exponent: f64,
    pub reference_pathloss_db: f64,
    pub qos_exponent_ul: f64,
    pub qos_exponent_dl: f64,
    pub violation_prob_ul: f64,
    pub violation_prob_dl: f64,
    pub nonempty_buffer_prob_ul: f64,
    pub nonempty_buffer_prob_dl: f64,
    pub max_power_mbs_dbm: f64,
    pub max_power_sbs_dbm: f64,
    pub max_power_user_dbm: f64,
    /// Currency per watt.
    pub cost_weight_power: f64,
    /// Currency per millisecond of NF execution.
    pub cost_weight_exec: f64,
    pub users_per_bs_per_service: usize,
    pub teleoperator_placement: TeleoperatorPlacement,
    /// Capacity of every backhaul link of the full mesh.
    pub backhaul_capacity_bps: f64,
    /// Processing rate per base station, broadcast like the NF coefficients.
    pub processing_rate_bps: Vec<f64>,
    pub rng_seed: u64,
    pub services: Vec<ServiceSpec>,
}

impl Default for ScenarioConfig {
    /// Radio parameters of the reference evaluation setup with one tactile
    /// service of 1 ms end-to-end budget.
    fn default() -> Self {
        Self {
            num_sbs: 4,
            coverage_area_km2: 10.0,
            num_ul_subcarriers: 8,
            num_dl_subcarriers: 16,
            ul_bandwidth_hz: 5e6,
            dl_bandwidth_hz: 5e6,
            noise_psd_dbm_hz: -174.0,
            pathloss_exponent: 3.0,
            reference_pathloss_db: 128.1,
            qos_exponent_ul: 11.0,
            qos_exponent_dl: 11.0,
            violation_prob_ul: 1e-3,
            violation_prob_dl: 1e-3,
            nonempty_buffer_prob_ul: 1.0,
            nonempty_buffer_prob_dl: 1.0,
            max_power_mbs_dbm: 46.0,
            max_power_sbs_dbm: 43.0,
            max_power_user_dbm: 23.0,
            cost_weight_power: 1.0,
            cost_weight_exec: 1.0,
            users_per_bs_per_service: 5,
            teleoperator_placement: TeleoperatorPlacement::Uniform,
            backhaul_capacity_bps: 1e9,
            processing_rate_bps: vec![1e9],
            rng_seed: 1,
            services: vec![ServiceSpec {
                id: 0,
                e2e_delay_max_s: 1e-3,
                payload_bits: 250.0,
                chain: vec![
                    NfSpec {
                        id: 0,
                        processing_coefficient_per_bs: vec![1.0, 1.5],
                    },
                    NfSpec {
                        id: 1,
                        processing_coefficient_per_bs: vec![2.0, 2.5],
                    },
                ],
            }],
        }
    }
}

/// One violated invariant of a [`ScenarioConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: file not found")]
    NotFound { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl ScenarioError {
    /// Names of the fields flagged by a validation error.
    pub fn invalid_fields(&self) -> Vec<&str> {
        match self {
            ScenarioError::Invalid(v) => v.iter().map(|v| v.field.as_str()).collect(),
            _ => Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn num_bs(&self) -> usize {
        self.num_sbs + 1
    }

    pub fn noise_psd_w_hz(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_hz)
    }

    pub fn ul_subcarrier_bandwidth_hz(&self) -> f64 {
        self.ul_bandwidth_hz / self.num_ul_subcarriers as f64
    }

    pub fn dl_subcarrier_bandwidth_hz(&self) -> f64 {
        self.dl_bandwidth_hz / self.num_dl_subcarriers as f64
    }

    pub fn total_users(&self) -> usize {
        self.num_bs() * self.services.len() * self.users_per_bs_per_service
    }

    /// Sets the end-to-end budget of every service.
    pub fn set_e2e_delay(&mut self, seconds: f64) {
        for s in &mut self.services {
            s.e2e_delay_max_s = seconds;
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut v = Vec::new();
        let mut bad = |field: &str, message: &str| {
            v.push(Violation {
                field: field.to_string(),
                message: message.to_string(),
            })
        };
        let positive = |x: f64| x.is_finite() && x > 0.0;

        if self.num_sbs < 1 {
            bad("num_sbs", "at least one small base station is required");
        }
        if self.num_ul_subcarriers < 1 {
            bad("num_ul_subcarriers", "must be at least 1");
        }
        if self.num_dl_subcarriers < 1 {
            bad("num_dl_subcarriers", "must be at least 1");
        }
        for (name, x) in [
            ("coverage_area_km2", self.coverage_area_km2),
            ("ul_bandwidth_hz", self.ul_bandwidth_hz),
            ("dl_bandwidth_hz", self.dl_bandwidth_hz),
            ("pathloss_exponent", self.pathloss_exponent),
            ("backhaul_capacity_bps", self.backhaul_capacity_bps),
            ("cost_weight_power", self.cost_weight_power),
            ("cost_weight_exec", self.cost_weight_exec),
        ] {
            if !positive(x) {
                bad(name, "must be finite and strictly positive");
            }
        }
        for (name, x) in [
            ("noise_psd_dbm_hz", self.noise_psd_dbm_hz),
            ("reference_pathloss_db", self.reference_pathloss_db),
            ("max_power_mbs_dbm", self.max_power_mbs_dbm),
            ("max_power_sbs_dbm", self.max_power_sbs_dbm),
            ("max_power_user_dbm", self.max_power_user_dbm),
        ] {
            if !x.is_finite() {
                bad(name, "must be finite");
            }
        }
        for (name, x) in [
            ("qos_exponent_ul", self.qos_exponent_ul),
            ("qos_exponent_dl", self.qos_exponent_dl),
        ] {
            if !positive(x) {
                bad(name, "QoS exponent must be strictly positive");
            }
        }
        for (name, x) in [
            ("violation_prob_ul", self.violation_prob_ul),
            ("violation_prob_dl", self.violation_prob_dl),
        ] {
            if !(x > 0.0 && x < 1.0) {
                bad(name, "violation probability must lie in (0, 1)");
            }
        }
        for (name, x) in [
            ("nonempty_buffer_prob_ul", self.nonempty_buffer_prob_ul),
            ("nonempty_buffer_prob_dl", self.nonempty_buffer_prob_dl),
        ] {
            if !(x > 0.0 && x <= 1.0) {
                bad(name, "non-empty buffer probability must lie in (0, 1]");
            }
        }
        if self.users_per_bs_per_service < 1 {
            bad("users_per_bs_per_service", "must be at least 1");
        }
        if self.processing_rate_bps.is_empty() || !self.processing_rate_bps.iter().all(|&x| positive(x)) {
            bad("processing_rate_bps", "needs at least one entry, all strictly positive");
        }
        if self.services.is_empty() {
            bad("services", "at least one service is required");
        }
        for (i, s) in self.services.iter().enumerate() {
            if s.id != i {
                bad(&format!("services[{i}].id"), "service ids must equal their position");
            }
            if !positive(s.e2e_delay_max_s) {
                bad(&format!("services[{i}].e2e_delay_max_s"), "must be strictly positive");
            }
            if !positive(s.payload_bits) {
                bad(&format!("services[{i}].payload_bits"), "must be strictly positive");
            }
            if s.chain.is_empty() {
                bad(&format!("services[{i}].chain"), "a service needs at least one NF");
            }
            for (f, nf) in s.chain.iter().enumerate() {
                if nf.processing_coefficient_per_bs.is_empty()
                    || !nf.processing_coefficient_per_bs.iter().all(|&x| positive(x))
                {
                    bad(
                        &format!("services[{i}].chain[{f}].processing_coefficient_per_bs"),
                        "needs at least one entry, all strictly positive",
                    );
                }
            }
        }
        let per_bs = self.services.len() * self.users_per_bs_per_service;
        match self.teleoperator_placement {
            TeleoperatorPlacement::Home => {
                if per_bs > self.num_dl_subcarriers {
                    bad(
                        "teleoperator_placement",
                        "home placement needs at least one downlink subcarrier per teleoperator",
                    );
                }
            }
            TeleoperatorPlacement::Uniform => {
                if self.total_users() > self.num_bs() * self.num_dl_subcarriers {
                    bad(
                        "num_dl_subcarriers",
                        "not enough downlink subcarriers to attach every teleoperator",
                    );
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(v))
        }
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(self).map_err(|e| ScenarioError::Serialize(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        parse_toml(text, Path::new("<memory>"))
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T, ScenarioError> {
    toml::from_str(text).map_err(|e| ScenarioError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            ScenarioError::NotFound {
                path: path.to_path_buf(),
            }
        } else {
            ScenarioError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })
}

fn write(path: &Path, text: &str) -> Result<(), ScenarioError> {
    std::fs::write(path, text).map_err(|e| ScenarioError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Reads and validates a configuration file.
pub fn load(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    let path = path.as_ref();
    let config: ScenarioConfig = parse_toml(&read(path)?, path)?;
    config.validate()?;
    Ok(config)
}

pub fn save(config: &ScenarioConfig, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    write(path.as_ref(), &config.to_toml()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub id: usize,
    pub position_km: [f64; 2],
    pub max_power_w: f64,
    pub processing_rate_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: usize,
    pub bs: usize,
    pub service: usize,
    pub position_km: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teleoperator: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Teleoperator {
    pub id: usize,
    pub bs: usize,
    pub position_km: [f64; 2],
}

/// Channel power gains indexed `(link, base station, subcarrier)`, stored
/// row-major: link-major, then base station, then subcarrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainTable {
    pub links: usize,
    pub base_stations: usize,
    pub carriers: usize,
    pub values: Vec<f64>,
}

impl GainTable {
    pub fn zeros(links: usize, base_stations: usize, carriers: usize) -> Self {
        Self {
            links,
            base_stations,
            carriers,
            values: vec![0.0; links * base_stations * carriers],
        }
    }

    #[inline]
    fn index(&self, link: usize, bs: usize, carrier: usize) -> usize {
        debug_assert!(link < self.links && bs < self.base_stations && carrier < self.carriers);
        (link * self.base_stations + bs) * self.carriers + carrier
    }

    #[inline]
    pub fn get(&self, link: usize, bs: usize, carrier: usize) -> f64 {
        self.values[self.index(link, bs, carrier)]
    }

    pub fn set(&mut self, link: usize, bs: usize, carrier: usize, value: f64) {
        let i = self.index(link, bs, carrier);
        self.values[i] = value;
    }
}

/// One frame of the network: immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub config: ScenarioConfig,
    /// Index 0 is the MBS.
    pub base_stations: Vec<BaseStation>,
    pub users: Vec<User>,
    pub teleoperators: Vec<Teleoperator>,
    /// `h[user][bs][k]`: gain between a tactile user and a base station on an
    /// uplink subcarrier.
    pub ul_gain: GainTable,
    /// `ĥ[teleoperator][bs][l]`: gain between a base station and a
    /// teleoperator on a downlink subcarrier.
    pub dl_gain: GainTable,
    /// Full-mesh backhaul capacity; the diagonal is unused and stored as 0.
    pub backhaul_bps: Vec<Vec<f64>>,
}

// Stream tags for keyed random draws.
const TAG_USER_POS: u64 = 1;
const TAG_OP_BS: u64 = 2;
const TAG_OP_POS: u64 = 3;
const TAG_UL_GAIN: u64 = 4;
const TAG_DL_GAIN: u64 = 5;

fn keyed_rng(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    for (chunk, word) in bytes.chunks_exact_mut(8).zip([seed, tag, a, b]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

fn user_key(bs: usize, service: usize, index: usize) -> u64 {
    ((bs as u64) << 40) | ((service as u64) << 20) | index as u64
}

fn broadcast(values: &[f64], i: usize) -> f64 {
    values
        .get(i)
        .or_else(|| values.last())
        .copied()
        .unwrap_or(f64::NAN)
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn nearest_bs(p: [f64; 2], bss: &[BaseStation]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for bs in bss {
        let d = distance(p, bs.position_km);
        if d < best_d {
            best = bs.id;
            best_d = d;
        }
    }
    best
}

/// Uniform point in the coverage disc whose nearest base station is `bs`.
fn place_in_cell(rng: &mut ChaCha8Rng, radius: f64, bs: usize, bss: &[BaseStation]) -> [f64; 2] {
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let r = radius * rng.random::<f64>().sqrt();
        let a = 2.0 * PI * rng.random::<f64>();
        let p = [r * a.cos(), r * a.sin()];
        if nearest_bs(p, bss) == bs {
            return p;
        }
    }
    bss[bs].position_km
}

fn draw_gains(
    table: &mut GainTable,
    link: usize,
    position: [f64; 2],
    bss: &[BaseStation],
    config: &ScenarioConfig,
    mut rng_for_bs: impl FnMut(usize) -> ChaCha8Rng,
) {
    for bs in bss {
        let d = distance(position, bs.position_km).max(MIN_DISTANCE_KM);
        let mut rng = rng_for_bs(bs.id);
        for k in 0..table.carriers {
            let fading: f64 = Exp1.sample(&mut rng);
            table.set(
                link,
                bs.id,
                k,
                path_gain(fading, d, config.pathloss_exponent, config.reference_pathloss_db),
            );
        }
    }
}

impl Scenario {
    /// Builds a frame: MBS at the origin, SBSs on a ring at half the coverage
    /// radius, users uniform over the coverage disc restricted to their
    /// serving cell, one teleoperator per tactile user.
    pub fn generate(config: &ScenarioConfig, seed: u64) -> Result<Self, ScenarioError> {
        config.validate()?;
        let radius = (config.coverage_area_km2 / PI).sqrt();
        let ring = radius / 2.0;
        let j = config.num_sbs;
        let base_stations: Vec<BaseStation> = (0..=j)
            .map(|id| {
                let position_km = if id == 0 {
                    [0.0, 0.0]
                } else {
                    let a = 2.0 * PI * (id - 1) as f64 / j as f64;
                    [ring * a.cos(), ring * a.sin()]
                };
                let max_power_dbm = if id == 0 {
                    config.max_power_mbs_dbm
                } else {
                    config.max_power_sbs_dbm
                };
                BaseStation {
                    id,
                    position_km,
                    max_power_w: dbm_to_watts(max_power_dbm),
                    processing_rate_bps: broadcast(&config.processing_rate_bps, id),
                }
            })
            .collect();

        let mut users = Vec::with_capacity(config.total_users());
        let mut keys = Vec::with_capacity(config.total_users());
        for bs in 0..=j {
            for service in 0..config.services.len() {
                for i in 0..config.users_per_bs_per_service {
                    let key = user_key(bs, service, i);
                    let mut rng = keyed_rng(seed, TAG_USER_POS, key, 0);
                    let id = users.len();
                    users.push(User {
                        id,
                        bs,
                        service,
                        position_km: place_in_cell(&mut rng, radius, bs, &base_stations),
                        teleoperator: Some(id),
                    });
                    keys.push(key);
                }
            }
        }

        let capacity = config.num_dl_subcarriers;
        let mut attached = vec![0usize; j + 1];
        let mut teleoperators = Vec::with_capacity(users.len());
        for (user, &key) in users.iter().zip(&keys) {
            let bs = match config.teleoperator_placement {
                TeleoperatorPlacement::Home => user.bs,
                TeleoperatorPlacement::Uniform => {
                    let open: Vec<usize> = (0..=j).filter(|&b| attached[b] < capacity).collect();
                    let mut rng = keyed_rng(seed, TAG_OP_BS, key, 0);
                    open[rng.random_range(0..open.len())]
                }
            };
            attached[bs] += 1;
            let mut rng = keyed_rng(seed, TAG_OP_POS, key, 0);
            teleoperators.push(Teleoperator {
                id: user.id,
                bs,
                position_km: place_in_cell(&mut rng, radius, bs, &base_stations),
            });
        }

        let mut ul_gain = GainTable::zeros(users.len(), j + 1, config.num_ul_subcarriers);
        for (user, &key) in users.iter().zip(&keys) {
            draw_gains(&mut ul_gain, user.id, user.position_km, &base_stations, config, |b| {
                keyed_rng(seed, TAG_UL_GAIN, key, b as u64)
            });
        }
        let mut dl_gain = GainTable::zeros(teleoperators.len(), j + 1, config.num_dl_subcarriers);
        for (op, &key) in teleoperators.iter().zip(&keys) {
            draw_gains(&mut dl_gain, op.id, op.position_km, &base_stations, config, |b| {
                keyed_rng(seed, TAG_DL_GAIN, key, b as u64)
            });
        }

        let backhaul_bps = (0..=j)
            .map(|a| {
                (0..=j)
                    .map(|b| if a == b { 0.0 } else { config.backhaul_capacity_bps })
                    .collect()
            })
            .collect();

        Ok(Self {
            seed,
            config: config.clone(),
            base_stations,
            users,
            teleoperators,
            ul_gain,
            dl_gain,
            backhaul_bps,
        })
    }

    pub fn num_bs(&self) -> usize {
        self.base_stations.len()
    }

    pub fn service_of(&self, user: usize) -> &ServiceSpec {
        &self.config.services[self.users[user].service]
    }

    pub fn payload_bits(&self, user: usize) -> f64 {
        self.service_of(user).payload_bits
    }

    pub fn e2e_delay_max(&self, user: usize) -> f64 {
        self.service_of(user).e2e_delay_max_s
    }

    pub fn paired_teleoperator(&self, user: usize) -> Option<usize> {
        self.users[user].teleoperator
    }

    /// Tactile user paired with a teleoperator, if any.
    pub fn paired_user(&self, teleoperator: usize) -> Option<usize> {
        self.users
            .iter()
            .find(|u| u.teleoperator == Some(teleoperator))
            .map(|u| u.id)
    }

    pub fn user_max_power_w(&self) -> f64 {
        dbm_to_watts(self.config.max_power_user_dbm)
    }

    pub fn noise_ul_w(&self) -> f64 {
        self.config.noise_psd_w_hz() * self.config.ul_subcarrier_bandwidth_hz()
    }

    pub fn noise_dl_w(&self) -> f64 {
        self.config.noise_psd_w_hz() * self.config.dl_subcarrier_bandwidth_hz()
    }

    /// Checks the structural invariants of a frame.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.config.validate()?;
        let mut v = Vec::new();
        let mut bad = |field: &str, message: String| {
            v.push(Violation {
                field: field.to_string(),
                message,
            })
        };
        let nb = self.config.num_bs();
        if self.base_stations.len() != nb {
            bad("base_stations", format!("expected {nb} base stations"));
        }
        if self.users.len() != self.config.total_users() {
            bad("users", "user count does not match the configuration".into());
        }
        let mut seen = vec![false; self.teleoperators.len()];
        for u in &self.users {
            if u.bs >= nb || u.service >= self.config.services.len() {
                bad("users", format!("user {} has an unknown BS or service", u.id));
            }
            if let Some(o) = u.teleoperator {
                if o >= self.teleoperators.len() {
                    bad("users", format!("user {} paired with unknown teleoperator {o}", u.id));
                } else if std::mem::replace(&mut seen[o], true) {
                    bad("users", format!("teleoperator {o} paired with more than one user"));
                }
            }
        }
        let shapes = [
            ("ul_gain", &self.ul_gain, self.users.len(), self.config.num_ul_subcarriers),
            (
                "dl_gain",
                &self.dl_gain,
                self.teleoperators.len(),
                self.config.num_dl_subcarriers,
            ),
        ];
        for (name, table, links, carriers) in shapes {
            if table.links != links
                || table.base_stations != nb
                || table.carriers != carriers
                || table.values.len() != links * nb * carriers
            {
                bad(name, "gain table shape mismatch".into());
            }
            if table.values.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
                bad(name, "gains must be finite and non-negative".into());
            }
        }
        for (a, row) in self.backhaul_bps.iter().enumerate() {
            for (b, &c) in row.iter().enumerate() {
                if a != b && (!(c > 0.0) || c != self.backhaul_bps[b][a]) {
                    bad("backhaul_bps", format!("link {a}-{b} must be positive and symmetric"));
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(v))
        }
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(self).map_err(|e| ScenarioError::Serialize(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
        write(path.as_ref(), &self.to_toml()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let scn: Scenario = parse_toml(&read(path)?, path)?;
        scn.validate()?;
        Ok(scn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_conversions() {
        assert_eq!(dbm_to_watts(30.0), 1.0);
        assert!((dbm_to_watts(0.0) - 0.001).abs() < 1e-15);
        // 10^1.6 = 39.810717055349...
        assert!((dbm_to_watts(46.0) - 39.810_717_055_349_72).abs() < 1e-9);
    }

    #[test]
    fn unit_distance_unit_fading_is_unit_gain() {
        assert_eq!(path_gain(1.0, 1.0, 3.0, 0.0), 1.0);
    }

    #[test]
    fn gain_decreases_with_distance() {
        for d in [0.05, 0.3, 0.9, 1.7] {
            assert!(path_gain(0.7, d, 3.0, 128.1) > path_gain(0.7, d * 1.01, 3.0, 128.1));
        }
    }

    #[test]
    fn table_two_shape() {
        let config = ScenarioConfig::default();
        let scn = Scenario::generate(&config, 7).unwrap();
        assert_eq!(scn.num_bs(), 5);
        assert_eq!(scn.users.len(), 25);
        assert_eq!(scn.ul_gain.carriers, 8);
        assert_eq!(scn.dl_gain.carriers, 16);
        for u in 0..scn.users.len() {
            for b in 0..5 {
                let row: Vec<f64> = (0..8).map(|k| scn.ul_gain.get(u, b, k)).collect();
                assert_eq!(row.len(), 8);
                assert!(row.iter().all(|g| *g > 0.0));
            }
        }
        scn.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        let config = ScenarioConfig::default();
        let a = Scenario::generate(&config, 11).unwrap();
        let b = Scenario::generate(&config, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_toml().unwrap(), b.to_toml().unwrap());
        let c = Scenario::generate(&config, 12).unwrap();
        assert_ne!(a.ul_gain, c.ul_gain);
    }

    #[test]
    fn sbs_equidistant_from_mbs() {
        let scn = Scenario::generate(&ScenarioConfig::default(), 3).unwrap();
        let d: Vec<f64> = scn.base_stations[1..]
            .iter()
            .map(|b| distance(b.position_km, [0.0, 0.0]))
            .collect();
        for x in &d {
            assert!((x - d[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn users_sit_in_their_cell() {
        let scn = Scenario::generate(&ScenarioConfig::default(), 5).unwrap();
        for u in &scn.users {
            assert_eq!(nearest_bs(u.position_km, &scn.base_stations), u.bs);
        }
        for o in &scn.teleoperators {
            assert_eq!(nearest_bs(o.position_km, &scn.base_stations), o.bs);
        }
    }

    #[test]
    fn growing_carriers_keeps_earlier_draws() {
        let mut config = ScenarioConfig::default();
        let small = Scenario::generate(&config, 9).unwrap();
        config.num_ul_subcarriers = 12;
        let large = Scenario::generate(&config, 9).unwrap();
        for u in 0..small.users.len() {
            for b in 0..small.num_bs() {
                for k in 0..8 {
                    assert_eq!(small.ul_gain.get(u, b, k), large.ul_gain.get(u, b, k));
                }
            }
        }
    }

    #[test]
    fn pairing_is_an_injection_respecting_capacity() {
        let mut config = ScenarioConfig::default();
        config.num_dl_subcarriers = 6;
        let scn = Scenario::generate(&config, 21).unwrap();
        let mut per_bs = vec![0; scn.num_bs()];
        for o in &scn.teleoperators {
            per_bs[o.bs] += 1;
        }
        assert!(per_bs.iter().all(|&n| n <= 6));
        let mut paired: Vec<usize> = scn.users.iter().filter_map(|u| u.teleoperator).collect();
        paired.sort_unstable();
        paired.dedup();
        assert_eq!(paired.len(), scn.users.len());
    }

    #[test]
    fn validation_lists_every_violation() {
        let mut config = ScenarioConfig::default();
        config.violation_prob_ul = 1.5;
        config.qos_exponent_dl = 0.0;
        config.num_ul_subcarriers = 0;
        let err = config.validate().unwrap_err();
        let fields = err.invalid_fields();
        assert!(fields.contains(&"violation_prob_ul"));
        assert!(fields.contains(&"qos_exponent_dl"));
        assert!(fields.contains(&"num_ul_subcarriers"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = ScenarioConfig::default().to_toml().unwrap();
        text.insert_str(0, "bogus_field = 3\n");
        assert!(matches!(
            ScenarioConfig::from_toml(&text),
            Err(ScenarioError::Parse { .. })
        ));
    }
}
