//! `idla` — grow internal DLA clusters, relax sandpiles, compute the
//! Gaussian-limit observables, and run the verification suites.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use idla_lab::cluster::{self, GrowthMode};
use idla_lab::gff;
use idla_lab::io as labio;
use idla_lab::observables::{AnnularTestFunction, ModeCoefficient, RadialProfile};
use idla_lab::poly;
use idla_lab::render;
use idla_lab::sandpile;
use idla_lab::stats::{
    run_ensemble_range, EnsembleConfig, EnsembleMode, PsiSpec, StatisticSpec, TestVerdict,
};
use idla_lab::verify::{self, Tolerances};

#[derive(Parser)]
#[command(name = "idla", version, about)]
struct Cli {
    /// Worker threads (default: all cores; env IDLA_JOBS also honored).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grow one cluster and write a binary snapshot.
    Grow(GrowArgs),
    /// Relax a divisible sandpile and report its shape.
    Sandpile(SandpileArgs),
    /// Inspect discrete harmonic polynomials as JSON.
    Poly(PolyArgs),
    /// Complex moments M_k over an ensemble (CSV).
    Moments(MomentsArgs),
    /// Mean-value deviations Phi over an ensemble (CSV).
    Phi(PhiArgs),
    /// Lateness statistic X_R over an ensemble (CSV).
    LatenessStat(LatenessArgs),
    /// Augmented/ordinary GFF reference tables and samples.
    Gff(GffArgs),
    /// Render cluster figures as PPM.
    Render(RenderArgs),
    /// Run a verification suite; exits nonzero on failure.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GrowArgs {
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Discrete mode: number of particles.
    #[arg(long, conflicts_with = "time")]
    particles: Option<u64>,
    /// Poisson mode: clock horizon t.
    #[arg(long)]
    time: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    stream: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SandpileArgs {
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Total mass t.
    #[arg(long)]
    mass: f64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Optional snapshot output (shared binary format, mass payload).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PolyArgs {
    /// Discrete harmonic p_k (z, zbar monomials).
    #[arg(long, conflicts_with_all = ["factorial", "xi_re"])]
    pk: Option<i64>,
    /// Symmetric factorial polynomial P_k.
    #[arg(long)]
    factorial: Option<u32>,
    /// Image of Re z^k under the coordinate-wise factorial map.
    #[arg(long)]
    xi_re: Option<u32>,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trials: u32,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MomentsArgs {
    #[command(flatten)]
    ensemble: EnsembleArgs,
    /// Poisson clock horizon.
    #[arg(long, default_value_t = 1e4)]
    time: f64,
    #[arg(long, default_value_t = 4)]
    kmax: u32,
}

#[derive(Args)]
struct PhiArgs {
    #[command(flatten)]
    ensemble: EnsembleArgs,
    /// Test polynomial: one, re_p<k>, im_p<k>.
    #[arg(long, default_value = "re_p2")]
    psi: String,
    #[arg(long, default_value_t = 16)]
    mesh: u32,
    /// Comma-separated evaluation times.
    #[arg(long, default_value = "0.5,1")]
    times: String,
}

#[derive(Args)]
struct LatenessArgs {
    #[command(flatten)]
    ensemble: EnsembleArgs,
    #[arg(long, default_value_t = 48.0)]
    r_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    r0: f64,
    #[arg(long, default_value_t = 2.0)]
    r1: f64,
    /// Modes as "k:re:im" triples, comma separated.
    #[arg(long, default_value = "1:1:0")]
    modes: String,
}

#[derive(Args)]
struct GffArgs {
    /// Print the spherical-mode variance table.
    #[arg(long, conflicts_with = "sample")]
    mode_table: bool,
    /// Sample the d = 2 random Fourier series coefficients.
    #[arg(long)]
    sample: bool,
    #[arg(long, default_value_t = 2)]
    dim: u32,
    #[arg(long, default_value_t = 8)]
    lmax: u32,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, value_enum, default_value_t = KindArg::Augmented)]
    kind: KindArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    kmax: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Augmented,
    Ordinary,
}

#[derive(Args)]
struct RenderArgs {
    #[command(subcommand)]
    which: RenderKind,
}

#[derive(Subcommand)]
enum RenderKind {
    /// Red-white-blue lateness shading (Poisson snapshots).
    Lateness {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Symmetric palette clamp.
        #[arg(long, default_value_t = 2.0)]
        bound: f64,
    },
    /// Symmetric difference against the disk of area t.
    Symdiff {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comparison time (defaults to the snapshot horizon).
        #[arg(long)]
        t: Option<f64>,
    },
}

#[derive(Args)]
struct VerifyArgs {
    #[command(subcommand)]
    suite: VerifySuite,
    /// Write the verdict array here as well as stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Standard-error multiplier override.
    #[arg(long, global = true)]
    z: Option<f64>,
    /// Relative variance tolerance override (CLT and lateness).
    #[arg(long, global = true)]
    rel_var: Option<f64>,
    /// Cross-moment correlation cap override.
    #[arg(long, global = true)]
    corr_cap: Option<f64>,
    /// Normality p-value floor override.
    #[arg(long, global = true)]
    p_min: Option<f64>,
    /// Sandpile mass tolerance override.
    #[arg(long, global = true)]
    mass_tol: Option<f64>,
    /// Sandpile annulus width cap override.
    #[arg(long, global = true)]
    width_cap: Option<f64>,
    /// Van der Corput sup growth cap override.
    #[arg(long, global = true)]
    vdc_ratio_cap: Option<f64>,
}

#[derive(Subcommand)]
enum VerifySuite {
    /// Moment CLT against the augmented-field variances.
    Clt {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        trials: u32,
        #[arg(long, default_value_t = 1e4)]
        time: f64,
        #[arg(long, default_value_t = 4)]
        kmax: u32,
    },
    /// FKG positive association of disjoint box counts.
    Fkg {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        trials: u32,
        #[arg(long, default_value_t = 1e3)]
        time: f64,
    },
    /// Van der Corput boundedness scan.
    Vdc {
        #[arg(long, default_value_t = 4)]
        kmax: u32,
        #[arg(long, default_value_t = 1e6)]
        t_max: f64,
    },
    /// Sandpile invariants and the exact 1-D solution.
    Sandpile,
    /// Quadratic-variation mesh scaling.
    Qv {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        trials: u32,
        #[arg(long, default_value_t = 16)]
        mesh: u32,
        #[arg(long, default_value_t = 1.0)]
        time: f64,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let jobs = cli
        .jobs
        .or_else(|| {
            std::env::var("IDLA_JOBS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("thread pool")?;
    }

    match cli.command {
        Command::Grow(args) => grow(args),
        Command::Sandpile(args) => run_sandpile(args),
        Command::Poly(args) => run_poly(args),
        Command::Moments(args) => moments(args),
        Command::Phi(args) => phi(args),
        Command::LatenessStat(args) => lateness_stat(args),
        Command::Gff(args) => run_gff(args),
        Command::Render(args) => run_render(args),
        Command::Verify(args) => run_verify(args),
    }
}

fn grow(args: GrowArgs) -> anyhow::Result<()> {
    let mode = match (args.particles, args.time) {
        (Some(n), None) => GrowthMode::Discrete(n),
        (None, Some(t)) => GrowthMode::Poisson(t),
        _ => bail!("specify exactly one of --particles or --time"),
    };
    let history = cluster::grow(args.dim, mode, args.seed, args.stream)?;
    labio::save_history_file(&history, &args.out)?;
    eprintln!(
        "grew {} sites (d={}, seed={}, stream={}) -> {}",
        history.len(),
        args.dim,
        args.seed,
        args.stream,
        args.out.display()
    );
    Ok(())
}

fn run_sandpile(args: SandpileArgs) -> anyhow::Result<()> {
    let field = sandpile::relax(args.mass, args.dim, args.tol)?;
    let report = field.shape_report();
    let summary = serde_json::json!({
        "t": args.mass,
        "dimension": args.dim,
        "tol": args.tol,
        "total_mass": field.total_mass(),
        "residual": field.residual,
        "inner_radius": report.inner,
        "outer_radius": report.outer,
        "annulus_width": report.width,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(path) = args.out {
        labio::save_sandpile_file(&field, &path)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn run_poly(args: PolyArgs) -> anyhow::Result<()> {
    let json = if let Some(k) = args.pk {
        poly::pair_poly_to_json(&poly::discrete_zk(k))
    } else if let Some(k) = args.factorial {
        poly::exact_poly_to_json(&poly::symmetric_factorial_poly(k))
    } else if let Some(k) = args.xi_re {
        let (re, _) = poly::zk_real_imag(2, 0, 1, k);
        poly::exact_poly_to_json(&poly::xi_transform(&re))
    } else {
        bail!("choose one of --pk, --factorial, --xi-re");
    };
    println!("{}", serde_json::to_string_pretty(&json)?);
    Ok(())
}

/// Run an ensemble in chunks, appending to the writer after each chunk
/// so partial results survive an interruption.
fn run_chunked(
    config: &EnsembleConfig,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let hash = labio::config_hash(config);
    let mut sink: BufWriter<Box<dyn Write>> = BufWriter::new(match &out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(std::io::stdout()),
    });
    labio::write_csv_header(&mut sink, config.base_seed, &hash)?;
    let chunk = 64u64;
    let mut lo = 1u64;
    let hi = config.trials as u64 + 1;
    while lo < hi {
        let hi_chunk = (lo + chunk).min(hi);
        let records = run_ensemble_range(config, lo, hi_chunk)?;
        for r in &records {
            labio::write_csv_row(&mut sink, r)?;
        }
        sink.flush()?;
        lo = hi_chunk;
    }
    if let Some(p) = out {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn moments(args: MomentsArgs) -> anyhow::Result<()> {
    let config = EnsembleConfig {
        d: 2,
        mode: EnsembleMode::Poisson { t: args.time },
        trials: args.ensemble.trials,
        base_seed: args.ensemble.seed,
        statistics: vec![StatisticSpec::Moments {
            kmax: args.kmax,
            t: args.time,
        }],
        max_failure_fraction: 0.01,
    };
    run_chunked(&config, args.ensemble.out)
}

fn parse_psi(s: &str) -> anyhow::Result<PsiSpec> {
    if s == "one" {
        return Ok(PsiSpec::One);
    }
    if let Some(k) = s.strip_prefix("re_p") {
        return Ok(PsiSpec::RePk(k.parse()?));
    }
    if let Some(k) = s.strip_prefix("im_p") {
        return Ok(PsiSpec::ImPk(k.parse()?));
    }
    bail!("unknown psi spec {s:?} (expected one, re_p<k>, im_p<k>)")
}

fn phi(args: PhiArgs) -> anyhow::Result<()> {
    let psi = parse_psi(&args.psi)?;
    let times: Vec<f64> = args
        .times
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()?;
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let config = EnsembleConfig {
        d: 2,
        mode: EnsembleMode::Poisson {
            t: (args.mesh as f64).powi(2) * t_max,
        },
        trials: args.ensemble.trials,
        base_seed: args.ensemble.seed,
        statistics: vec![StatisticSpec::Phi {
            psi,
            m: args.mesh,
            times,
        }],
        max_failure_fraction: 0.01,
    };
    run_chunked(&config, args.ensemble.out)
}

fn lateness_stat(args: LatenessArgs) -> anyhow::Result<()> {
    let mut modes = Vec::new();
    for triple in args.modes.split(',') {
        let parts: Vec<&str> = triple.trim().split(':').collect();
        if parts.len() != 3 {
            bail!("mode {triple:?} is not k:re:im");
        }
        modes.push(ModeCoefficient {
            k: parts[0].parse()?,
            amp_re: parts[1].parse()?,
            amp_im: parts[2].parse()?,
            profile: RadialProfile::SplineBump,
        });
    }
    let phi = AnnularTestFunction::new(args.r0, args.r1, modes)?;
    let config = EnsembleConfig {
        d: 2,
        mode: EnsembleMode::CoverRadius {
            radius: args.r1 * args.r_scale,
        },
        trials: args.ensemble.trials,
        base_seed: args.ensemble.seed,
        statistics: vec![StatisticSpec::LatenessX {
            phi,
            r_scale: args.r_scale,
        }],
        max_failure_fraction: 0.01,
    };
    run_chunked(&config, args.ensemble.out)
}

fn run_gff(args: GffArgs) -> anyhow::Result<()> {
    if args.sample {
        let field = gff::sample_fourier_field_2d(args.kmax, args.seed);
        let json = serde_json::json!({
            "seed": args.seed,
            "kmax": args.kmax,
            "alpha": field.alpha,
            "beta": field.beta,
        });
        println!("{}", serde_json::to_string_pretty(&json)?);
        return Ok(());
    }
    let kind = match args.kind {
        KindArg::Augmented => gff::FieldKind::Augmented,
        KindArg::Ordinary => gff::FieldKind::Ordinary,
    };
    let table = gff::mode_spectrum(kind, args.dim, args.radius, args.lmax)?;
    println!("{}", serde_json::to_string_pretty(&table)?);
    Ok(())
}

fn run_render(args: RenderArgs) -> anyhow::Result<()> {
    match args.which {
        RenderKind::Lateness { input, out, bound } => {
            let history = labio::load_history_file(&input)?;
            let field = cluster::lateness(&history)?;
            let img = render::render_lateness(&field, bound)?;
            let comment = format!(
                "idla-lab v{} lateness seed={} stream={} bound={}",
                labio::tool_version(),
                history.seed,
                history.stream,
                bound
            );
            let mut w = BufWriter::new(File::create(&out)?);
            img.write_ppm(&mut w, &comment)?;
            eprintln!("wrote {}x{} -> {}", img.width, img.height, out.display());
        }
        RenderKind::Symdiff { input, out, t } => {
            let history = labio::load_history_file(&input)?;
            let t = t.unwrap_or(history.t_max);
            let img = render::render_symmetric_difference(&history, t)?;
            let comment = format!(
                "idla-lab v{} symdiff seed={} stream={} t={}",
                labio::tool_version(),
                history.seed,
                history.stream,
                t
            );
            let mut w = BufWriter::new(File::create(&out)?);
            img.write_ppm(&mut w, &comment)?;
            eprintln!("wrote {}x{} -> {}", img.width, img.height, out.display());
        }
    }
    Ok(())
}

fn run_verify(args: VerifyArgs) -> anyhow::Result<()> {
    let mut tol = Tolerances::default();
    if let Some(z) = args.z {
        tol.z = z;
    }
    if let Some(r) = args.rel_var {
        tol.clt_rel_var = r;
        tol.lateness_rel_var = r;
    }
    if let Some(c) = args.corr_cap {
        tol.corr_cap = c;
    }
    if let Some(p) = args.p_min {
        tol.p_min = p;
    }
    if let Some(m) = args.mass_tol {
        tol.mass_tol = m;
    }
    if let Some(w) = args.width_cap {
        tol.width_cap = w;
    }
    if let Some(v) = args.vdc_ratio_cap {
        tol.vdc_ratio_cap = v;
    }
    let verdicts: Vec<TestVerdict> = match args.suite {
        VerifySuite::Clt {
            seed,
            trials,
            time,
            kmax,
        } => verify::verify_clt(seed, trials, time, kmax, &tol)?,
        VerifySuite::Fkg { seed, trials, time } => verify::verify_fkg(seed, trials, time, &tol)?,
        VerifySuite::Vdc { kmax, t_max } => verify::verify_vdc(kmax, t_max, &tol)?,
        VerifySuite::Sandpile => verify::verify_sandpile(&tol)?,
        VerifySuite::Qv {
            seed,
            trials,
            mesh,
            time,
        } => verify::verify_qv(seed, trials, mesh, time, &tol)?,
    };
    let json = serde_json::to_string_pretty(&verdicts)?;
    println!("{json}");
    if let Some(path) = args.out {
        std::fs::write(&path, &json)?;
        eprintln!("wrote {}", path.display());
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", verdicts.len());
        std::process::exit(1);
    }
    eprintln!("all {} checks passed", verdicts.len());
    Ok(())
}
