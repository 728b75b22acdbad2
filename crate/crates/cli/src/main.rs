use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ldacs_lab::experiment::{self, ExperimentPlan, LoadedPlan, Measure, RunOptions};
use ldacs_lab::filter_design::{self, FilterSpec};
use ldacs_lab::numeric::{FxFormat, WORD_LENGTHS};
use ldacs_lab::stream::Variant;

#[derive(Parser)]
#[command(name = "ldacs-lab", version, about = "LDACS OFDM / WOLA-OFDM / FOFDM transceiver laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed; overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
    /// Worker threads (0: one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Dump per-step stream traces.
    #[arg(long)]
    trace: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a plan file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Design the FOFDM filter from a filter spec file.
    DesignFilter {
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Measure spectra and out-of-band figures for a plan.
    Psd {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare a partition variant with the all-frame-mode chain.
    Equivalence {
        variant: Variant,
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<LoadedPlan> {
    let mut loaded = ExperimentPlan::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        loaded.plan.experiment.seed = s;
        if let Some(p) = loaded.provenance.iter_mut().find(|p| p.key == "experiment.seed") {
            p.from_config = true;
        }
    }
    Ok(loaded)
}

fn run(mut loaded: LoadedPlan, common: &Common, psd_only: bool) -> Result<()> {
    if psd_only {
        loaded.plan.experiment.measure = vec![Measure::Psd];
    }
    let opts = RunOptions {
        workers: common.workers,
        trace: common.trace,
    };
    let result = experiment::run_experiment(&loaded.plan, opts)?;
    let files = experiment::write_outputs(&common.out_dir, &loaded, &result)?;
    for r in &result.ber {
        println!(
            "{:5} WL {:5} {:4} SNR {:>5} dB  BER {:.3e}  ({} / {} bits, {} missed bursts)",
            r.kind,
            r.word_length,
            r.channel,
            r.snr_db,
            r.ber(),
            r.bits_error,
            r.bits_total,
            r.detection_failures
        );
    }
    for p in &result.psd {
        println!(
            "{:5} WL {:5} OOB attenuation {:6.2} dB, OOB floor {:6.2} dB",
            p.kind,
            p.label,
            p.attenuation_db(),
            p.oob_floor_rel_db
        );
    }
    for s in &result.skipped {
        eprintln!("skipped {}: {}", s.what, s.reason);
    }
    println!("wrote {} files to {}", files.len(), common.out_dir.display());
    Ok(())
}

fn design_filter(path: &Path, common: &Common) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: FilterSpec = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    spec.validate()?;
    let d = filter_design::design_lowpass_pm(&spec)?;
    std::fs::create_dir_all(&common.out_dir)?;
    std::fs::write(common.out_dir.join("coeffs.txt"), filter_design::coeffs_to_text(&d.coeffs))?;
    std::fs::write(common.out_dir.join("response.csv"), filter_design::response_csv(&d.coeffs, 2048))?;
    let mut summary = format!(
        "taps,{}\niterations,{}\ndeviation,{:e}\npassband_ripple_db,{:.4}\nstopband_attenuation_db,{:.4}\n",
        d.coeffs.len(),
        d.iterations,
        d.deviation,
        d.passband_ripple_db,
        d.stopband_attenuation_db
    );
    for wl in WORD_LENGTHS {
        let q = filter_design::quantize_coeffs(&d.coeffs, FxFormat::coeff(wl)?);
        let loss = q.attenuation_loss_db(&d.coeffs, spec.stopband_edge());
        summary.push_str(&format!("attenuation_loss_db_wl{wl},{loss:.4}\n"));
    }
    std::fs::write(common.out_dir.join("filter_summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn equivalence(variant: Variant, loaded: &LoadedPlan, common: &Common) -> Result<bool> {
    let reports = experiment::run_equivalence(&loaded.plan, variant, common.trace)?;
    let mut csv = String::from("kind,variant,tx_identical,bits_identical,boundary_element,boundary_count,observed_count,passed\n");
    let mut all = true;
    std::fs::create_dir_all(&common.out_dir)?;
    for r in &reports {
        match &r.outcome {
            Ok(e) => {
                let (element, count) = e
                    .boundary
                    .map_or(("none".to_string(), String::new()), |b| (b.element.to_string(), b.count.to_string()));
                let observed = e.observed_count.map_or(String::new(), |c| c.to_string());
                csv.push_str(&format!(
                    "{},{},{},{},{element},{count},{observed},{}\n",
                    r.kind,
                    variant,
                    e.tx_identical,
                    e.bits_identical,
                    e.passed()
                ));
                println!(
                    "{:5} {variant}: {} (boundary {element} x {})",
                    r.kind,
                    if e.passed() { "identical to V1" } else { "MISMATCH" },
                    if count.is_empty() { "-" } else { &count }
                );
                all &= e.passed();
            }
            Err(msg) => println!("{:5} {variant}: not applicable ({msg})", r.kind),
        }
        if let Some(t) = &r.trace {
            std::fs::write(common.out_dir.join(format!("trace_{}_{variant}.csv", r.kind)), t)?;
        }
    }
    std::fs::write(common.out_dir.join("equivalence.csv"), csv)?;
    Ok(all)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config, common } => load(config, common.seed).and_then(|l| run(l, common, false)),
        Command::Psd { config, common } => load(config, common.seed).and_then(|l| run(l, common, true)),
        Command::DesignFilter { spec, common } => design_filter(spec, common),
        Command::Equivalence { variant, config, common } => load(config, common.seed)
            .and_then(|l| equivalence(*variant, &l, common))
            .and_then(|ok| if ok { Ok(()) } else { bail!("stream run differs from the frame-mode reference") }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
