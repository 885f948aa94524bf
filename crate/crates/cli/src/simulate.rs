use std::io::Write as _;
use std::path::PathBuf;

use chrono::{Duration, NaiveDate};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use evkit::dist::sample_gpd;
use evkit::rng::{derive_seed, rng_from_seed};
use evkit::simkit::{gen_beta_gpd_splice, run_experiment, RfaTruth, SchemeSpec, Subject};
use evkit::GpdParams;

use crate::report::num;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    /// Daily values with GPD tails, site parameters varying across sites.
    Daily,
    /// Daily-stamped Beta/GPD splice values per site (truth threshold 5).
    Splice,
    /// Annual maxima from the regional model with Gaussian-copula dependence.
    Regional,
    /// Run the experiment described by `--config` and write its summary.
    Experiment,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "daily")]
    pub kind: Kind,
    #[arg(long, default_value_t = 5)]
    pub sites: usize,
    /// Years per site (observations per site for `splice`, split evenly).
    #[arg(long, default_value_t = 30)]
    pub years: usize,
    /// Copula range for `regional`; omit for independent sites.
    #[arg(long)]
    pub phi: Option<f64>,
    /// JSON experiment: {"scheme": {...}, "subject": {...}, "replicates": N, "alpha": A}.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the regional covariate as `block,value`.
    #[arg(long)]
    pub covariate_out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct ExperimentConfig {
    scheme: SchemeSpec,
    subject: Subject,
    replicates: usize,
    #[serde(default = "default_alpha")]
    alpha: f64,
}

fn default_alpha() -> f64 {
    0.05
}

const START_YEAR: i32 = 1970;

fn site_name(i: usize) -> String {
    format!("S{:03}", i + 1)
}

pub fn run(a: &SimulateArgs) -> Result<(), String> {
    let io = |e: std::io::Error| format!("{}: {e}", a.out.display());
    if a.kind == Kind::Experiment {
        let path = a.config.as_ref().ok_or("--kind experiment needs --config")?;
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if cfg.replicates < 100 {
            return Err("experiments need at least 100 replicates".into());
        }
        let summary = run_experiment(&cfg.scheme, &cfg.subject, cfg.replicates, cfg.alpha, a.seed).map_err(|e| e.to_string())?;
        return std::fs::write(&a.out, summary.to_csv()).map_err(io);
    }
    if a.sites == 0 || a.years < 3 {
        return Err("need at least one site and three years".into());
    }
    let mut out = String::from("site_id,date,value\n");
    match a.kind {
        Kind::Daily => {
            for s in 0..a.sites {
                let seed = derive_seed(a.seed, s as u64);
                let u = (s as f64 + 0.5) / a.sites as f64;
                let p = GpdParams::new(0.5 + 1.5 * u, 0.2 * u).map_err(|e| e.to_string())?;
                let first = NaiveDate::from_ymd_opt(START_YEAR, 1, 1).unwrap();
                let last = NaiveDate::from_ymd_opt(START_YEAR + a.years as i32, 1, 1).unwrap();
                let days = (last - first).num_days() as usize;
                let values = sample_gpd(days, &p, &mut rng_from_seed(seed));
                for (d, v) in values.iter().enumerate() {
                    let date = first + Duration::days(d as i64);
                    out.push_str(&format!("{},{},{}\n", site_name(s), date.format("%Y-%m-%d"), num(*v)));
                }
            }
        }
        Kind::Splice => {
            for s in 0..a.sites {
                let n = a.years * 365;
                let values = gen_beta_gpd_splice(n / 2, n - n / 2, derive_seed(a.seed, s as u64)).map_err(|e| e.to_string())?;
                let first = NaiveDate::from_ymd_opt(START_YEAR, 1, 1).unwrap();
                for (d, v) in values.iter().enumerate() {
                    let date = first + Duration::days(d as i64);
                    out.push_str(&format!("{},{},{}\n", site_name(s), date.format("%Y-%m-%d"), num(*v)));
                }
            }
        }
        Kind::Regional => {
            let truth = RfaTruth::generate(a.sites, a.years, derive_seed(a.seed, u64::MAX));
            let y = truth.simulate(a.phi, a.seed).map_err(|e| e.to_string())?;
            for s in 0..a.sites {
                for t in 0..a.years {
                    out.push_str(&format!("{},{},{}\n", site_name(s), START_YEAR + t as i32, num(y[(s, t)])));
                }
            }
            if let Some(p) = &a.covariate_out {
                let mut c = String::from("block,value\n");
                for (t, v) in truth.covariate.iter().enumerate() {
                    c.push_str(&format!("{},{}\n", START_YEAR + t as i32, num(*v)));
                }
                std::fs::write(p, c).map_err(|e| format!("{}: {e}", p.display()))?;
            }
        }
        Kind::Experiment => unreachable!(),
    }
    let mut f = std::fs::File::create(&a.out).map_err(io)?;
    f.write_all(out.as_bytes()).map_err(io)
}
