use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use worci::baselines::{BaselineSpec, Method};
use worci::ci_as::{ci_empirical, AsOptions, Centering};
use worci::ci_banach::{
    ell_n, radius_closed_form, radius_optimized, radius_schneider, BanachParams, ClosedForm, ConstantMode, Kernel,
    KernelGram,
};
use worci::ci_finite::{ci_proposed, containment_envelope, ConfidenceBudget, DEFAULT_TOL};
use worci::dualsolve::j_dual;
use worci::population::{
    compensated_sum, load_values, load_vectors, rng_from_seed, sample_indices, DiscreteDistribution, SamplingDesign,
};
use worci::ratefn::{rate_i, Side};
use worci::sim::{self, ExperimentConfig};
use worci::Error;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("WOR_CI_BUILD"), ")");

#[derive(Parser)]
#[command(name = "wor-ci", version = VERSION, about = "Confidence intervals for sampling without replacement")]
struct Cli {
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Confidence intervals for the population mean.
    #[command(subcommand)]
    Ci(CiCommand),
    /// Rate function utilities.
    #[command(subcommand)]
    Ratefn(RateCommand),
    /// Kernel mean embedding deviation of a random subsample.
    Mmd(MmdArgs),
    /// Run a simulation experiment from a config file.
    Simulate(SimulateArgs),
}

#[derive(Subcommand)]
enum CiCommand {
    /// Finite-alphabet rate-function interval.
    Finite(FiniteArgs),
    /// Almost-sure interval from the empirical log-moment generating function.
    As(AsArgs),
    /// Norm-ball radius for Banach-valued populations.
    Banach(BanachArgs),
    /// Classical baseline interval.
    Baseline(BaselineArgs),
}

#[derive(Subcommand)]
enum RateCommand {
    /// Evaluate I(P, beta, Q).
    Eval(EvalArgs),
    /// Solve the dual for J(P, beta, m).
    Dual(DualArgs),
}

#[derive(Args)]
struct FiniteArgs {
    /// Sample values, one per row.
    #[arg(long)]
    sample: PathBuf,
    /// Alphabet values, one per row.
    #[arg(long)]
    alphabet: PathBuf,
    /// Population size.
    #[arg(long = "N")]
    big_n: usize,
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
}

#[derive(Args)]
struct AsArgs {
    #[arg(long)]
    sample: PathBuf,
    #[arg(long = "N")]
    big_n: usize,
    #[arg(long)]
    alpha: f64,
    /// paper | safe | exact
    #[arg(long, default_value = "paper")]
    constant: ConstantMode,
    /// mean | raw
    #[arg(long, default_value = "mean")]
    centering: Centering,
}

#[derive(Args)]
struct BanachArgs {
    #[arg(long = "N")]
    big_n: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    alpha: f64,
    /// Norm bound on the elements.
    #[arg(long, default_value_t = 1.0)]
    d: f64,
    /// Smoothness constant, at least 1.
    #[arg(long = "D", default_value_t = 1.0)]
    big_d: f64,
    /// Also minimise the radius over lambda.
    #[arg(long)]
    optimize: bool,
}

#[derive(Args)]
struct BaselineArgs {
    /// hoeffding | hoeffding_serfling | hoeffding_serfling_improved | bernstein_serfling | clt
    #[arg(long)]
    method: Method,
    #[arg(long)]
    sample: PathBuf,
    #[arg(long = "N")]
    big_n: usize,
    #[arg(long)]
    alpha: f64,
    /// Known population standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Distribution P as `value,weight` rows.
    #[arg(long)]
    p: PathBuf,
    /// Distribution Q as `value,weight` rows on the same alphabet.
    #[arg(long)]
    q: PathBuf,
    #[arg(long)]
    beta: f64,
}

#[derive(Args)]
struct DualArgs {
    /// Distribution P as `value,weight` rows.
    #[arg(long)]
    p: PathBuf,
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    m: f64,
    #[arg(long, default_value = "plus")]
    side: Side,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Args)]
struct MmdArgs {
    /// Feature vectors, one per row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    sample_frac: f64,
    /// matern32 | rbf
    #[arg(long, default_value = "matern32")]
    kernel: String,
    #[arg(long)]
    lengthscale: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output path.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Solver { .. } | Error::Certificate(_) => 4,
        _ => 3,
    }
}

fn load_distribution(path: &Path) -> worci::Result<DiscreteDistribution> {
    let rows = load_vectors(path)?;
    if rows.first().is_some_and(|r| r.len() != 2) {
        return Err(Error::Ingest { row: 1, msg: "expected value,weight rows".into() });
    }
    let (a, w): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| (r[0], r[1])).unzip();
    DiscreteDistribution::normalized(a, w)
}

fn mean(xs: &[f64]) -> f64 {
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

/// JSON text with every float written to 17 significant digits.
fn to_json_text(v: &Value) -> String {
    let mut out = String::new();
    write_json(v, &mut out);
    out
}

fn write_json(v: &Value, out: &mut String) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            write!(out, "{x:.16e}").unwrap();
        }
        Value::Array(xs) => {
            out.push('[');
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_json(x, out);
            }
            out.push(']');
        }
        Value::Object(m) => {
            out.push('{');
            for (i, (k, x)) in m.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_json(x, out);
            }
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x > 0.0 {
        json!("inf")
    } else if x < 0.0 {
        json!("-inf")
    } else {
        json!("nan")
    }
}

fn render(fields: &[(&str, Value)], as_json: bool) -> String {
    if as_json {
        let m: serde_json::Map<String, Value> = fields.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        to_json_text(&Value::Object(m))
    } else {
        fields
            .iter()
            .map(|(k, v)| match v {
                Value::String(s) => format!("{k}: {s}"),
                other => format!("{k}: {other}"),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn run(cli: Cli) -> worci::Result<String> {
    let j = cli.json;
    match cli.command {
        Command::Ci(CiCommand::Finite(a)) => {
            let sample = load_values(&a.sample)?;
            let alphabet = load_values(&a.alphabet)?;
            let design = SamplingDesign::new(a.big_n, sample.len())?;
            let iv = ci_proposed(&sample, &alphabet, &design, a.alpha, a.tol)?;
            let budget = ConfidenceBudget::new(a.alpha, alphabet.len(), a.big_n, None)?;
            let env = containment_envelope(mean(&sample), &design, budget.c_n);
            Ok(render(
                &[
                    ("b_minus", num(iv.lo)),
                    ("b_plus", num(iv.hi)),
                    ("width", num(iv.width())),
                    ("sample_mean", num(mean(&sample))),
                    ("c_n", num(budget.c_n)),
                    ("envelope_lo", num(env.lo)),
                    ("envelope_hi", num(env.hi)),
                ],
                j,
            ))
        }
        Command::Ci(CiCommand::As(a)) => {
            let sample = load_values(&a.sample)?;
            let design = SamplingDesign::new(a.big_n, sample.len())?;
            let opts = AsOptions { constant: a.constant, centering: a.centering, ..AsOptions::default() };
            let r = ci_empirical(&sample, &design, a.alpha, &opts)?;
            Ok(render(
                &[
                    ("lo", num(r.interval.lo)),
                    ("hi", num(r.interval.hi)),
                    ("center", num(r.center)),
                    ("epsilon", num(r.epsilon)),
                    ("t", num(r.t)),
                ],
                j,
            ))
        }
        Command::Ci(CiCommand::Banach(a)) => {
            let design = SamplingDesign::new(a.big_n, a.n)?;
            let p = BanachParams::new(a.d, a.big_d, &design, a.alpha)?;
            let (c3, c3_ok) = radius_closed_form(&p, ClosedForm::C3);
            let (c24, c24_ok) = radius_closed_form(&p, ClosedForm::C24);
            let mut fields = vec![
                ("ell_n", num(ell_n(&p))),
                ("eps_closed_c3", num(c3)),
                ("c3_valid", json!(c3_ok)),
                ("eps_closed_c24", num(c24)),
                ("c24_valid", json!(c24_ok)),
                ("eps_schneider", num(radius_schneider(&p))),
            ];
            if a.optimize {
                let r = radius_optimized(&p, 1e-12)?;
                fields.push(("eps_opt", num(r.epsilon)));
                fields.push(("lambda_opt", num(r.lambda)));
            }
            Ok(render(&fields, j))
        }
        Command::Ci(CiCommand::Baseline(a)) => {
            let sample = load_values(&a.sample)?;
            let design = SamplingDesign::new(a.big_n, sample.len())?;
            let spec = BaselineSpec { method: a.method, sigma: a.sigma, design, alpha: a.alpha };
            let h = spec.half_width(&sample)?;
            let mu = mean(&sample);
            Ok(render(
                &[("half_width", num(h)), ("lo", num(mu - h)), ("hi", num(mu + h)), ("sample_mean", num(mu))],
                j,
            ))
        }
        Command::Ratefn(RateCommand::Eval(a)) => {
            let p = load_distribution(&a.p)?;
            let q = load_distribution(&a.q)?;
            let v = rate_i(&p, a.beta, &q)?;
            Ok(render(&[("value", num(v.value())), ("feasible", json!(v.feasible()))], j))
        }
        Command::Ratefn(RateCommand::Dual(a)) => {
            let p = load_distribution(&a.p)?;
            let s = j_dual(&p, a.beta, a.m, a.side, a.tol)?;
            Ok(render(
                &[
                    ("value", num(s.value.value())),
                    ("lambda", num(s.point.lambda)),
                    ("rho", num(s.point.rho)),
                    ("gap", num(s.gap_certificate)),
                    ("outer_iterations", json!(s.iterations.outer)),
                    ("inner_iterations", json!(s.iterations.inner)),
                ],
                j,
            ))
        }
        Command::Mmd(a) => {
            let data = load_vectors(&a.data)?;
            let kernel = match a.kernel.as_str() {
                "matern32" => Kernel::Matern32 { lengthscale: a.lengthscale },
                "rbf" => Kernel::Rbf { lengthscale: a.lengthscale },
                other => return Err(Error::InvalidArgument(format!("unknown kernel {other:?}"))),
            };
            if !(a.sample_frac > 0.0 && a.sample_frac <= 1.0) {
                return Err(Error::InvalidArgument("sample-frac must lie in (0,1]".into()));
            }
            let big_n = data.len();
            let n = ((a.sample_frac * big_n as f64).round() as usize).clamp(1, big_n);
            let design = SamplingDesign::new(big_n, n)?;
            let gram = KernelGram::new(&data, &kernel)?;
            let idx = sample_indices(big_n, n, &mut rng_from_seed(a.seed));
            let dev = gram.deviation(&idx)?;
            let (d, big_d) = kernel.banach_constants();
            let p = BanachParams::new(d, big_d, &design, a.alpha)?;
            let (eps_closed, _) = radius_closed_form(&p, ClosedForm::C3);
            Ok(render(
                &[
                    ("n", json!(n)),
                    ("big_n", json!(big_n)),
                    ("deviation", num(dev)),
                    ("eps_opt", num(radius_optimized(&p, 1e-12)?.epsilon)),
                    ("eps_closed", num(eps_closed)),
                    ("eps_schneider", num(radius_schneider(&p))),
                ],
                j,
            ))
        }
        Command::Simulate(a) => {
            let mut cfg = ExperimentConfig::from_file(&a.config)?;
            cfg.apply_env()?;
            let out = sim::run(&cfg)?;
            let path = a.output.or_else(|| cfg.output.as_ref().map(PathBuf::from));
            if let Some(p) = &path {
                std::fs::write(p, &out.csv)?;
            }
            if j {
                let mut v = json!({
                    "experiment": cfg.experiment.to_string(),
                    "seed": cfg.seed,
                    "summary": out.summary,
                });
                if let Some(p) = &path {
                    v["output"] = json!(p.display().to_string());
                }
                Ok(to_json_text(&v))
            } else if path.is_some() {
                Ok(out.summary_line)
            } else {
                Ok(format!("{}{}", out.csv, out.summary_line))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
