//! Scenario files: flat JSON objects describing one problem instance.
//!
//! Either all four `gamma_*` keys give the gains directly, or all four
//! `lambda_*_db` keys give the fading means and the gains are drawn from
//! `seed`. Budgets are `pn_max_db` and `pf_max_db`. `order`, `sca`,
//! `allocation` and `zeta` are optional.

use cnoma_core::channel::{sample_gains, ChannelDistribution, ChannelGains};
use cnoma_core::rates::{Allocation, DecodingOrder, PowerBudgets};
use cnoma_core::sca::ScaConfig;
use serde_json::{Map, Value};

const GAIN_KEYS: [&str; 4] = ["gamma_n", "gamma_f", "gamma_nf", "gamma_si"];
const MEAN_KEYS: [&str; 4] = ["lambda_n_db", "lambda_f_db", "lambda_nf_db", "lambda_si_db"];

#[derive(Debug, Clone, PartialEq)]
pub enum Instance {
    Explicit(ChannelGains),
    Random {
        distribution: ChannelDistribution,
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub instance: Instance,
    pub pn_max_db: f64,
    pub pf_max_db: f64,
    pub order: Option<DecodingOrder>,
    pub sca: ScaConfig,
    pub allocation: Option<Allocation>,
    pub zeta: Option<f64>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, String> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| format!("not valid JSON: {e}"))?;
        let obj = value.as_object().ok_or("scenario must be a JSON object")?;
        Self::from_map(obj)
    }

    fn from_map(obj: &Map<String, Value>) -> Result<Self, String> {
        let has_any = |keys: &[&str]| keys.iter().any(|k| obj.contains_key(*k));
        let instance = match (has_any(&GAIN_KEYS), has_any(&MEAN_KEYS)) {
            (true, true) => {
                return Err("give either gamma_* gains or lambda_*_db means, not both".into())
            }
            (true, false) => {
                let [n, f, nf, si] = numbers(obj, &GAIN_KEYS)?;
                let g = ChannelGains::new(n, f, nf, si);
                if !g.is_valid() {
                    return Err("channel gains must be finite and nonnegative".into());
                }
                Instance::Explicit(g)
            }
            (false, true) => {
                let [n, f, nf, si] = numbers(obj, &MEAN_KEYS)?;
                let distribution = ChannelDistribution {
                    mean_gain_n_db: n,
                    mean_gain_f_db: f,
                    mean_gain_nf_db: nf,
                    mean_gain_si_db: si,
                };
                let seed = match obj.get("seed") {
                    None => None,
                    Some(v) => Some(
                        v.as_u64()
                            .ok_or("key `seed` must be a nonnegative integer")?,
                    ),
                };
                Instance::Random { distribution, seed }
            }
            (false, false) => {
                return Err("missing key `gamma_n` (or `lambda_n_db` for a random instance)".into())
            }
        };
        let [pn_max_db, pf_max_db] = numbers(obj, &["pn_max_db", "pf_max_db"])?;
        let order = match obj.get("order") {
            None => None,
            Some(v) => Some(
                v.as_str()
                    .ok_or("key `order` must be a string")?
                    .parse::<DecodingOrder>()?,
            ),
        };
        let sca = match obj.get("sca") {
            None => ScaConfig::default(),
            Some(v) => sca_overrides(v)?,
        };
        let allocation = match obj.get("allocation") {
            None => None,
            Some(v) => {
                let inner = v.as_object().ok_or("key `allocation` must be an object")?;
                let [an, af, bf] = numbers(inner, &["alpha_n", "alpha_f", "beta_f"])?;
                Some(Allocation::new(an, af, bf))
            }
        };
        let zeta = match obj.get("zeta") {
            None => None,
            Some(_) => Some(numbers(obj, &["zeta"])?[0]),
        };
        Ok(Self {
            instance,
            pn_max_db,
            pf_max_db,
            order,
            sca,
            allocation,
            zeta,
        })
    }

    /// Gains of the instance; random instances use the scenario seed, then
    /// `fallback_seed`.
    pub fn gains(&self, fallback_seed: u64) -> ChannelGains {
        match &self.instance {
            Instance::Explicit(g) => *g,
            Instance::Random { distribution, seed } => {
                sample_gains(distribution, seed.unwrap_or(fallback_seed), 0, 0)
            }
        }
    }

    pub fn budgets(&self) -> PowerBudgets {
        PowerBudgets::from_db(self.pn_max_db, self.pf_max_db)
    }
}

fn numbers<const N: usize>(obj: &Map<String, Value>, keys: &[&str; N]) -> Result<[f64; N], String> {
    let mut out = [0.0; N];
    for (slot, key) in out.iter_mut().zip(keys) {
        let v = obj
            .get(*key)
            .ok_or_else(|| format!("missing key `{key}`"))?;
        *slot = v
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| format!("key `{key}` must be a finite number"))?;
    }
    Ok(out)
}

fn sca_overrides(v: &Value) -> Result<ScaConfig, String> {
    let obj = v.as_object().ok_or("key `sca` must be an object")?;
    let mut cfg = ScaConfig::default();
    for (key, val) in obj {
        match key.as_str() {
            "max_iters" => {
                cfg.max_iters = val
                    .as_u64()
                    .ok_or("key `sca.max_iters` must be a positive integer")?
                    as usize
            }
            "q" => {
                cfg.q = val
                    .as_u64()
                    .and_then(|q| u32::try_from(q).ok())
                    .ok_or("key `sca.q` must be a positive integer")?
            }
            "epsilon" => cfg.epsilon = val.as_f64().ok_or("key `sca.epsilon` must be a number")?,
            other => return Err(format!("unknown key `sca.{other}`")),
        }
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}
