//! Subcommand implementations. Every random stream is derived from the
//! configuration's top-level seed, and every artifact goes to the run's
//! output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use multifreq_core::diagnostics::{
    count_independent, ff_error_curve, freq_step_curve, max_freq_step, minima_gap, nf_errors_aligned,
    IndependenceCurve, IndependenceScenario, ScatterMode, ScatterOptions, ScatterPoint, ScatterStudy,
};
use multifreq_core::forward::{
    assemble_forward, farfield_operator, probe_array_rows, DipoleSet, ObservationSet, ProbeArray,
};
use multifreq_core::geometry::{
    dipole_hull_sphere, dipole_ring, fibonacci_sphere, spherical_basis, Point3, SamplingSurface,
};
use multifreq_core::linalg::{wrap_phase, CMat, CVec};
use multifreq_core::retrieval::{linear_solve, multifreq_retrieve, InitPolicy, RetrieveOptions, Scenario};
use multifreq_core::rng::{self, derive_seed};
use multifreq_core::sync::{
    extract_relative_phases, fit_through_origin, multi_position_consistency, random_phase_coefficients, recover_tones,
    simulate_chain, Analysis, ChannelModel, CombSignal, ReceiverImpairments, TonePlan,
};
use multifreq_core::Complex64;
use rayon::prelude::*;

use crate::config::{AutSpec, InitSpec, ProbeSpec, ScenarioConfig, SyncSpec};
use crate::error::HarnessError;
use crate::io::{parse_f64, read_csv, read_json, write_csv, write_dipoles, write_json, write_points, MeasurementSet};
use crate::record::{RunRecord, StageRecord};

/// Random stream identifiers below the top-level seed.
mod stream {
    pub const AUT: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const SPECTRAL: u64 = 3;
    pub const INIT: u64 = 4;
    pub const DIRECTIONS: u64 = 5;
    pub const GAUSSIAN: u64 = 6;
    pub const COMB: u64 = 7;
    pub const RECEIVER: u64 = 8;
    pub const RECEIVER_NOISE: u64 = 9;
    pub const SCATTER: u64 = 10;
}

pub const RECORD_FILE: &str = "record.json";
pub const MEASUREMENT_FILE: &str = "measurements.csv";

/// Tolerance for recomputed metrics in `report`.
pub const VERIFY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Synthesize,
    Retrieve,
    CountIndependent,
    FreqStep,
    SyncSim,
    Scatter,
    Report,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Synthesize => "synthesize",
            Self::Retrieve => "retrieve",
            Self::CountIndependent => "count-independent",
            Self::FreqStep => "freq-step",
            Self::SyncSim => "sync-sim",
            Self::Scatter => "scatter",
            Self::Report => "report",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunContext {
    /// Effective configuration (seed overrides already applied).
    pub config: Option<ScenarioConfig>,
    pub out_dir: PathBuf,
    /// Measurement file for `retrieve`, or run directory for `report`.
    pub input: Option<PathBuf>,
}

impl RunContext {
    fn config(&self) -> Result<&ScenarioConfig, HarnessError> {
        self.config
            .as_ref()
            .ok_or_else(|| HarnessError::Usage("this subcommand needs --config".into()))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Runs a subcommand. All but `report` write `record.json` into the output
/// directory; `report` only reads.
pub fn run(cmd: Subcommand, ctx: &RunContext) -> Result<RunRecord, HarnessError> {
    if cmd != Subcommand::Report {
        std::fs::create_dir_all(&ctx.out_dir).map_err(|e| HarnessError::io(&ctx.out_dir, e))?;
    }
    let record = match cmd {
        Subcommand::Synthesize => synthesize(ctx)?,
        Subcommand::Retrieve => retrieve(ctx)?,
        Subcommand::CountIndependent => count_independent_cmd(ctx)?,
        Subcommand::FreqStep => freq_step(ctx)?,
        Subcommand::SyncSim => sync_sim(ctx)?,
        Subcommand::Scatter => scatter(ctx)?,
        Subcommand::Report => return report(ctx),
    };
    let record = record.finish();
    write_json(&ctx.path(RECORD_FILE), &record)?;
    Ok(record)
}

pub fn build_aut(cfg: &ScenarioConfig) -> Result<DipoleSet, HarnessError> {
    Ok(match cfg.aut {
        AutSpec::Hull { n_dipoles, radius } => {
            dipole_hull_sphere(n_dipoles, radius, derive_seed(cfg.seed, stream::AUT))?
        }
        AutSpec::Ring { n_dipoles, radius } => dipole_ring(n_dipoles, radius)?,
    })
}

/// Forward rows for every configured surface plus a location/polarization
/// label per row.
fn forward_rows(
    cfg: &ScenarioConfig,
    dipoles: &DipoleSet,
    frequency: f64,
) -> Result<(CMat, ObservationSet), HarnessError> {
    if cfg.surfaces.is_empty() {
        return Err(HarnessError::Config("surfaces: at least one surface required".into()));
    }
    let mut blocks = Vec::new();
    let mut labels = Vec::new();
    for s in &cfg.surfaces {
        let pts = s.points()?;
        match cfg.probe {
            ProbeSpec::Plain => {
                let obs = match s {
                    SamplingSurface::PlanarGrid { .. } => ObservationSet::cartesian_xy(&pts),
                    _ => ObservationSet::two_polarizations(&pts),
                };
                blocks.push(assemble_forward(dipoles, &obs, frequency)?.matrix);
                labels.push(obs);
            }
            ProbeSpec::Array {
                separation,
                displacement,
            } => {
                let probe = ProbeArray::new(separation, displacement)?;
                blocks.push(probe_array_rows(dipoles, &pts, &probe, frequency)?.matrix);
                let mut locs = Vec::new();
                let mut pols = Vec::new();
                for p in &pts {
                    let (_, t, f) = spherical_basis(p);
                    for pol in [t, f] {
                        for _ in 0..4 {
                            locs.push(*p);
                            pols.push(pol);
                        }
                    }
                }
                labels.push(ObservationSet::new(locs, pols)?);
            }
        }
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut a = CMat::zeros(rows, dipoles.len());
    let mut r0 = 0;
    for b in &blocks {
        a.rows_mut(r0, b.nrows()).copy_from(b);
        r0 += b.nrows();
    }
    Ok((a, ObservationSet::concat(&labels)))
}

/// Synthetic measurement scenario.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dipoles: DipoleSet,
    pub labels: ObservationSet,
    pub frequencies: Vec<f64>,
    pub reference: usize,
    pub forwards: Vec<CMat>,
    pub truth: Vec<CVec>,
    pub measured: Vec<CVec>,
}

impl Synthetic {
    pub fn measurement_set(&self) -> MeasurementSet {
        MeasurementSet::from_samples(
            &self.labels,
            &self.frequencies,
            self.reference,
            &self.measured,
            Some(&self.truth),
        )
    }
}

pub fn build_synthetic(cfg: &ScenarioConfig) -> Result<Synthetic, HarnessError> {
    let fspec = cfg.frequency_spec()?;
    let dipoles = build_aut(cfg)?;
    let x = dipoles.excitation_vector();
    let built = fspec
        .values
        .par_iter()
        .map(|&f| forward_rows(cfg, &dipoles, f))
        .collect::<Result<Vec<_>, _>>()?;
    let labels = built[0].1.clone();
    let forwards: Vec<CMat> = built.into_iter().map(|(a, _)| a).collect();
    let truth: Vec<CVec> = forwards.iter().map(|a| a * &x).collect();
    let mut noise = rng::seeded(derive_seed(cfg.seed, stream::NOISE));
    let measured = truth
        .iter()
        .map(|b| {
            if cfg.noise_level == 0.0 {
                return b.clone();
            }
            let sigma = cfg.noise_level * b.norm() / (b.len() as f64).sqrt();
            b + rng::complex_normal_vector(&mut noise, b.len()) * Complex64::from(sigma)
        })
        .collect();
    Ok(Synthetic {
        dipoles,
        labels,
        frequencies: fspec.values.clone(),
        reference: fspec.reference,
        forwards,
        truth,
        measured,
    })
}

fn synthesize(ctx: &RunContext) -> Result<RunRecord, HarnessError> {
    let cfg = ctx.config()?;
    let mut record = RunRecord::start("synthesize", cfg);
    let syn = build_synthetic(cfg)?;
    syn.measurement_set().write(&ctx.path(MEASUREMENT_FILE))?;
    write_dipoles(&ctx.path("aut.csv"), &syn.dipoles)?;
    write_points(&ctx.path("observations.csv"), &syn.labels.locations)?;
    record.artifacts = vec![MEASUREMENT_FILE.into(), "aut.csv".into(), "observations.csv".into()];
    record.metric("samples_per_frequency", syn.labels.len() as f64);
    record.metric("unknowns", syn.dipoles.len() as f64);
    info!(
        "synthesized {} samples at {} frequencies",
        syn.labels.len(),
        syn.frequencies.len()
    );
    Ok(record)
}

const ESTIMATE_HEADER: [&str; 6] = ["freq_hz", "sample", "re", "im", "true_re", "true_im"];
const FARFIELD_HEADER: [&str; 3] = ["freq_hz", "theta_rad", "eps_db"];
const RESIDUAL_HEADER: [&str; 2] = ["iter", "residual_db"];

fn write_residuals(path: &Path, history_db: &[f64]) -> Result<(), HarnessError> {
    let rows = history_db
        .iter()
        .enumerate()
        .map(|(i, r)| vec![i.to_string(), r.to_string()]);
    write_csv(path, &RESIDUAL_HEADER, rows)
}

fn retrieve(ctx: &RunContext) -> Result<RunRecord, HarnessError> {
    let cfg = ctx.config()?;
    let mut record = RunRecord::start("retrieve", cfg);
    let fspec = cfg.frequency_spec()?;
    let dipoles = build_aut(cfg)?;
    let forwards: Vec<CMat> = fspec
        .values
        .par_iter()
        .map(|&f| forward_rows(cfg, &dipoles, f).map(|(a, _)| a))
        .collect::<Result<_, _>>()?;
    let set = match &ctx.input {
        Some(p) => MeasurementSet::read(p)?,
        None => build_synthetic(cfg)?.measurement_set(),
    };
    if set.frequencies() != fspec.values {
        return Err(HarnessError::Config(
            "measurement frequencies differ from frequencies.values".into(),
        ));
    }
    let data = set.to_relative_phase_data(fspec.reference)?;
    if data.n_samples() != forwards[0].nrows() {
        return Err(HarnessError::Config(format!(
            "measurement has {} samples per frequency, configured geometry gives {}",
            data.n_samples(),
            forwards[0].nrows()
        )));
    }
    let truth = set.truth();

    let init = match cfg.solver.init {
        InitSpec::Spectral => InitPolicy::Spectral,
        InitSpec::Random => InitPolicy::Random(derive_seed(cfg.seed, stream::INIT)),
    };
    let options = RetrieveOptions {
        solver: cfg.solver.wirtinger(),
        spectral: cfg.solver.spectral(derive_seed(cfg.seed, stream::SPECTRAL)),
        rel_tol: cfg.solver.rel_tol,
        init,
        multi_frequency: cfg.solver.multi_frequency,
    };
    let scenario = Scenario {
        forwards: &forwards,
        data: &data,
        reference: fspec.reference,
    };
    let t = Instant::now();
    let mut result = multifreq_retrieve(&scenario, &options)?;
    let elapsed = t.elapsed().as_secs_f64();
    // the pipeline is timed as a whole; attribute it to the last phaseless stage
    match result.multi.as_mut() {
        Some(m) => m.wall_time_s = Some(elapsed),
        None => result.single.wall_time_s = Some(elapsed),
    }
    record
        .stages
        .push(StageRecord::from_report("single-frequency", &result.single));
    write_residuals(&ctx.path("residuals_single.csv"), &result.single.residual_history_db())?;
    record.artifacts.push("residuals_single.csv".into());
    if let Some(m) = &result.multi {
        record.stages.push(StageRecord::from_report("multi-frequency", m));
        write_residuals(&ctx.path("residuals_multi.csv"), &m.residual_history_db())?;
        record.artifacts.push("residuals_multi.csv".into());
    }

    // frequencies with an estimate: all of them, or only the reference
    let solved: Vec<usize> = (0..forwards.len())
        .filter(|&k| result.sample_estimates[k].is_some())
        .collect();
    let mut est_rows = Vec::new();
    let mut cur_rows = Vec::new();
    let mut ff_rows = Vec::new();
    let cut = ObservationSet::farfield_theta_cut(cfg.farfield.phi_deg, cfg.farfield.step_deg)?;
    for (slot, &k) in solved.iter().enumerate() {
        let f = fspec.values[k];
        let est = result.sample_estimates[k].as_ref().expect("solved frequency");
        let currents = &result.currents[slot];
        for (n, c) in currents.iter().enumerate() {
            cur_rows.push(vec![f.to_string(), n.to_string(), c.re.to_string(), c.im.to_string()]);
        }
        let Some(truth) = &truth else {
            for (l, z) in est.iter().enumerate() {
                est_rows.push(vec![
                    f.to_string(),
                    l.to_string(),
                    z.re.to_string(),
                    z.im.to_string(),
                    String::new(),
                    String::new(),
                ]);
            }
            continue;
        };
        let fitted = &forwards[k] * currents;
        for (l, (z, t)) in fitted.iter().zip(truth[k].iter()).enumerate() {
            est_rows.push(vec![
                f.to_string(),
                l.to_string(),
                z.re.to_string(),
                z.im.to_string(),
                t.re.to_string(),
                t.im.to_string(),
            ]);
        }
        let nf = nf_errors_aligned(&fitted, &truth[k])?;
        record.metric(format!("f{k}.freq_hz"), f);
        record.metric(format!("f{k}.nf_mag_db"), nf.mag_db());
        record.metric(format!("f{k}.nf_compl_db"), nf.compl_db());

        let ff_op = farfield_operator(&dipoles, &cut, f)?.matrix;
        let x_ref = linear_solve(&forwards[k], &truth[k], cfg.solver.rel_tol)?;
        let curve = ff_error_curve(&(&ff_op * currents), &(&ff_op * x_ref))?;
        for (dir, e) in cut.locations.iter().zip(&curve.db) {
            ff_rows.push(vec![
                f.to_string(),
                dir.z.clamp(-1.0, 1.0).acos().to_string(),
                e.to_string(),
            ]);
        }
        record.metric(format!("f{k}.ff_max_db"), curve.max_db);
        info!(
            "f = {f} Hz: NF complex deviation {:.1} dB, FF max deviation {:.1} dB",
            nf.compl_db(),
            curve.max_db
        );
    }
    write_csv(&ctx.path("estimates.csv"), &ESTIMATE_HEADER, est_rows)?;
    write_csv(&ctx.path("currents.csv"), &["freq_hz", "dipole", "re", "im"], cur_rows)?;
    record.artifacts.extend(["estimates.csv".into(), "currents.csv".into()]);
    if truth.is_some() {
        write_csv(&ctx.path("farfield.csv"), &FARFIELD_HEADER, ff_rows)?;
        record.artifacts.push("farfield.csv".into());
    }
    Ok(record)
}

fn count_independent_cmd(ctx: &RunContext) -> Result<RunRecord, HarnessError> {
    let cfg = ctx.config()?;
    let spec = cfg
        .independence
        .as_ref()
        .ok_or_else(|| HarnessError::Config("independence: section required".into()))?;
    let mut record = RunRecord::start("count-independent", cfg);
    let scenario = IndependenceScenario {
        dipoles: build_aut(cfg)?,
        frequency: spec.frequency,
        direction_seed: derive_seed(cfg.seed, stream::DIRECTIONS),
    };
    let setups = spec
        .setups
        .iter()
        .map(|s| s.to_setup(derive_seed(cfg.seed, stream::GAUSSIAN)))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..setups.len())
        .flat_map(|s| spec.sample_counts.iter().map(move |&m| (s, m)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(s, m)| {
            let a = scenario.operator(&setups[s], m)?;
            Ok((a.nrows(), count_independent(&a, spec.threshold)?))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    for (s, setup) in setups.iter().enumerate() {
        let mut curve = IndependenceCurve {
            label: setup.label(),
            sample_counts: Vec::new(),
            counts: Vec::new(),
            threshold: spec.threshold,
        };
        for ((js, _), (rows, count)) in jobs.iter().zip(&results) {
            if *js == s {
                curve.sample_counts.push(*rows);
                curve.counts.push(*count);
            }
        }
        let name = format!("independence_{s}_{}.csv", curve.label);
        let rows = curve
            .sample_counts
            .iter()
            .zip(&curve.counts)
            .map(|(m, c)| vec![m.to_string(), c.to_string()]);
        write_csv(&ctx.path(&name), &["M", "count"], rows)?;
        record.metric(format!("{s}_{}.saturation", curve.label), curve.saturation() as f64);
        record.artifacts.push(name);
        info!("{}: {:?}", curve.label, curve.counts);
    }
    Ok(record)
}

fn freq_step(ctx: &RunContext) -> Result<RunRecord, HarnessError> {
    let cfg = ctx.config()?;
    let spec = cfg
        .freq_step
        .as_ref()
        .ok_or_else(|| HarnessError::Config("freq_step: section required".into()))?;
    let mut record = RunRecord::start("freq-step", cfg);
    let n_steps = (spec.max_step_hz / spec.step_hz + 1e-9).floor() as usize;
    let steps: Vec<f64> = (1..=n_steps).map(|i| i as f64 * spec.step_hz).collect();
    let obs = Point3::new(spec.observation_distance, 0.0, 0.0);
    let curves = spec
        .ring_radii
        .par_iter()
        .map(|&d| {
            let ring = dipole_ring(spec.n_dipoles, d)?;
            let curve = freq_step_curve(&ring, &obs, spec.f1, &steps)?;
            let at_max =
                multifreq_core::diagnostics::freq_step_ratio(&ring, &obs, spec.f1, spec.f1 + max_freq_step(d)?)?;
            Ok((curve, at_max))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    for (i, (d, (curve, at_max))) in spec.ring_radii.iter().zip(&curves).enumerate() {
        let name = format!("freq_step_{i}.csv");
        let rows = curve.iter().map(|(df, r)| vec![df.to_string(), r.to_string()]);
        write_csv(&ctx.path(&name), &["delta_f_hz", "sigma_ratio"], rows)?;
        record.artifacts.push(name);
        record.metric(format!("d{i}.radius_m"), *d);
        record.metric(format!("d{i}.max_freq_step_hz"), max_freq_step(*d)?);
        record.metric(format!("d{i}.ratio_at_max_step"), *at_max);
    }
    Ok(record)
}

/// Per-position sync-sim outcome.
#[derive(Debug, Clone)]
pub struct SyncPosition {
    pub truth: Vec<f64>,
    pub table: multifreq_core::sync::ToneTable,
    pub delay_error_samples: f64,
}

pub fn sync_comb(spec: &SyncSpec, seed: u64) -> Result<CombSignal, HarnessError> {
    Ok(CombSignal::uniform(
        spec.tone_start_hz,
        spec.tone_spacing_hz,
        random_phase_coefficients(spec.n_tones, derive_seed(seed, stream::COMB)),
    )?)
}

/// Channels from the configured source to θ̂ receivers on a sphere,
/// normalized to unit median magnitude at the reference tone; the null
/// position, if any, is attenuated.
pub fn sync_channels(
    cfg: &ScenarioConfig,
    spec: &SyncSpec,
    comb: &CombSignal,
) -> Result<Vec<ChannelModel>, HarnessError> {
    let dipoles = build_aut(cfg)?;
    let plan = TonePlan {
        carrier_hz: spec.carrier_hz,
        lo_hz: spec.lo_hz,
    };
    let pts = fibonacci_sphere(spec.n_positions, spec.position_radius)?;
    let obs = ObservationSet::new(pts.clone(), pts.iter().map(|p| spherical_basis(p).1).collect())?;
    let per_tone: Vec<CVec> = plan
        .rf_frequencies(comb)
        .iter()
        .map(|&f| Ok(&assemble_forward(&dipoles, &obs, f)?.matrix * dipoles.excitation_vector()))
        .collect::<Result<_, HarnessError>>()?;
    let mut ref_mags: Vec<f64> = per_tone[spec.reference_tone].iter().map(|z| z.norm()).collect();
    ref_mags.sort_by(f64::total_cmp);
    let median = ref_mags[ref_mags.len() / 2];
    if !(median > 0.0) {
        return Err(HarnessError::Config(
            "sync: source produces no field at the receive positions".into(),
        ));
    }
    Ok((0..spec.n_positions)
        .map(|p| {
            let atten = if spec.null_position == Some(p) {
                10f64.powf(spec.null_level_db / 20.0)
            } else {
                1.0
            };
            ChannelModel {
                values: per_tone.iter().map(|b| b[p] * (atten / median)).collect(),
            }
        })
        .collect())
}

pub fn simulate_positions(
    cfg: &ScenarioConfig,
    spec: &SyncSpec,
) -> Result<(CombSignal, Vec<SyncPosition>), HarnessError> {
    let comb = sync_comb(spec, cfg.seed)?;
    let channels = sync_channels(cfg, spec, &comb)?;
    let plan = TonePlan {
        carrier_hz: spec.carrier_hz,
        lo_hz: spec.lo_hz,
    };
    let mut analysis = Analysis::new(spec.sample_rate_hz, plan, spec.reference_tone);
    analysis.leakage_tol = spec.leakage_tol;
    let receiver_seed = derive_seed(cfg.seed, stream::RECEIVER);
    let noise_seed = derive_seed(cfg.seed, stream::RECEIVER_NOISE);
    let positions = channels
        .par_iter()
        .enumerate()
        .map(|(p, h)| {
            let mut r = rng::seeded(derive_seed(receiver_seed, p as u64));
            let u = |r: &mut rng::Rng| {
                let z = rng::complex_normal(r);
                0.5 + z.arg() / (2.0 * std::f64::consts::PI)
            };
            let delay_samples = u(&mut r) * spec.max_delay_samples;
            let imp = ReceiverImpairments {
                lo_offset_hz: spec.lo_offset_hz,
                lo_phase: (u(&mut r) - 0.5) * 2.0 * std::f64::consts::PI,
                delay_s: delay_samples / spec.sample_rate_hz,
                noise_level: spec.noise_level,
                noise_seed: derive_seed(noise_seed, p as u64),
            };
            let cap = simulate_chain(&comb, h, &plan, &imp, spec.sample_rate_hz, spec.n_periods)?;
            let (table, sync) = recover_tones(&cap, &comb, &analysis)?;
            Ok(SyncPosition {
                truth: h.relative_phases(spec.reference_tone),
                table,
                delay_error_samples: sync.delay_samples - delay_samples,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok((comb, positions))
}

/// Inter-tone phase error (last tone against the reference) for each
/// residual synchronization error, noiseless.
pub fn jitter_sweep(cfg: &ScenarioConfig, spec: &SyncSpec) -> Result<(Vec<f64>, f64), HarnessError> {
    let comb = sync_comb(spec, cfg.seed)?;
    let plan = TonePlan {
        carrier_hz: spec.carrier_hz,
        lo_hz: spec.lo_hz,
    };
    let h = &sync_channels(cfg, spec, &comb)?[spec.reference_position];
    let imp = ReceiverImpairments {
        lo_offset_hz: spec.lo_offset_hz,
        ..ReceiverImpairments::default()
    };
    let cap = simulate_chain(&comb, h, &plan, &imp, spec.sample_rate_hz, spec.n_periods)?;
    let analysis = Analysis::new(spec.sample_rate_hz, plan, spec.reference_tone);
    let last = spec.n_tones - 1;
    let truth = h.relative_phases(spec.reference_tone)[last];
    let errors = spec
        .jitter_steps_s
        .iter()
        .map(|&dt| {
            let t = extract_relative_phases(&cap.if_series, &comb, &analysis, spec.lo_offset_hz, dt)?;
            Ok(wrap_phase(t.relative_phases[last] - truth))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let expected_slope =
        -2.0 * std::f64::consts::PI * (comb.frequencies_hz[last] - comb.frequencies_hz[spec.reference_tone]);
    Ok((errors, expected_slope))
}

fn sync_sim(ctx: &RunContext) -> Result<RunRecord, HarnessError> {
    let cfg = ctx.config()?;
    let spec = cfg.sync.clone().unwrap_or_default();
    let mut record = RunRecord::start("sync-sim", cfg);
    let (comb, positions) = simulate_positions(cfg, &spec)?;
    let mut tone_rows = Vec::new();
    for (p, pos) in positions.iter().enumerate() {
        for k in 0..comb.len() {
            tone_rows.push(vec![
                p.to_string(),
                (comb.frequencies_hz[k] + spec.carrier_hz).to_string(),
                pos.table.magnitudes[k].to_string(),
                pos.table.relative_phases[k].to_degrees().to_string(),
            ]);
        }
    }
    write_csv(
        &ctx.path("tones.csv"),
        &["position", "freq_hz", "mag", "phase_deg"],
        tone_rows,
    )?;
    let measured: Vec<Vec<f64>> = positions.iter().map(|p| p.table.relative_phases.clone()).collect();
    let truth: Vec<Vec<f64>> = positions.iter().map(|p| p.truth.clone()).collect();
    let cons = multi_position_consistency(&measured, &truth, spec.reference_position)?;
    let cons_rows = cons.per_position.iter().enumerate().map(|(p, s)| {
        vec![
            p.to_string(),
            s.mean.to_degrees().to_string(),
            s.std.to_degrees().to_string(),
            s.min.to_degrees().to_string(),
            s.max.to_degrees().to_string(),
        ]
    });
    write_csv(
        &ctx.path("consistency.csv"),
        &["position", "mean_deg", "std_deg", "min_deg", "max_deg"],
        cons_rows,
    )?;
    let mut healthy_max: f64 = 0.0;
    for (p, s) in cons.per_position.iter().enumerate() {
        record.metric(format!("p{p}.std_deg"), s.std.to_degrees());
        record.metric(format!("p{p}.delay_error_samples"), positions[p].delay_error_samples);
        if spec.null_position != Some(p) {
            healthy_max = healthy_max.max(s.std.to_degrees());
        }
    }
    record.metric("healthy_max_std_deg", healthy_max);

    let (errors, expected) = jitter_sweep(cfg, &spec)?;
    let (slope, r2) = fit_through_origin(&spec.jitter_steps_s, &errors)?;
    let rows = spec
        .jitter_steps_s
        .iter()
        .zip(&errors)
        .map(|(dt, e)| vec![dt.to_string(), e.to_string()]);
    write_csv(&ctx.path("jitter.csv"), &["delta_t_s", "phase_error_rad"], rows)?;
    record.metric("jitter.slope_rad_per_s", slope);
    record.metric("jitter.expected_slope_rad_per_s", expected);
    record.metric("jitter.r2", r2);
    record.artifacts = vec!["tones.csv".into(), "consistency.csv".into(), "jitter.csv".into()];
    Ok(record)
}

pub fn scatter_points(
    cfg: &ScenarioConfig,
    syn: &Synthetic,
    mode: ScatterMode,
) -> Result<Vec<ScatterPoint>, HarnessError> {
    let spec = cfg.scatter.clone().unwrap_or_default();
    let data = MeasurementSet::from_samples(&syn.labels, &syn.frequencies, syn.reference, &syn.measured, None)
        .to_relative_phase_data(syn.reference)?;
    let scenario = Scenario {
        forwards: &syn.forwards,
        data: &data,
        reference: syn.reference,
    };
    let special = match (mode, spec.special) {
        (ScatterMode::SingleFrequency, Some(multifreq_core::diagnostics::InitKind::SingleFrequency)) => {
            Some(multifreq_core::diagnostics::InitKind::Spectral)
        }
        (_, s) => s,
    };
    let options = ScatterOptions {
        mode,
        n_trials: spec.n_trials,
        special,
        base_seed: derive_seed(cfg.seed, stream::SCATTER),
        solver: cfg.solver.wirtinger(),
        spectral: cfg.solver.spectral(derive_seed(cfg.seed, stream::SPECTRAL)),
        rel_tol: cfg.solver.rel_tol,
    };
    let study = ScatterStudy::new(&scenario, &syn.truth, &options)?;
    Ok((0..study.n_trials())
        .into_par_iter()
        .map(|t| study.trial(t))
        .collect::<Result<Vec<_>, _>>()?)
}

fn mode_name(mode: ScatterMode) -> &'static str {
    match mode {
        ScatterMode::SingleFrequency => "single",
        ScatterMode::MultiFrequency => "multi",
    }
}

const SCATTER_HEADER: [&str; 4] = ["trial", "mag_dev_db", "compl_dev_db", "init_kind"];

fn scatter(ctx: &RunContext) -> Result<RunRecord, HarnessError> {
    let cfg = ctx.config()?;
    let spec = cfg.scatter.clone().unwrap_or_default();
    let mut record = RunRecord::start("scatter", cfg);
    let syn = build_synthetic(cfg)?;
    record.metric("converged_db", spec.converged_db);
    for &mode in &spec.modes {
        let points = scatter_points(cfg, &syn, mode)?;
        let name = format!("scatter_{}.csv", mode_name(mode));
        let rows = points.iter().map(|p| {
            vec![
                p.trial.to_string(),
                p.mag_dev_db.to_string(),
                p.compl_dev_db.to_string(),
                p.init_kind.as_str().to_string(),
            ]
        });
        write_csv(&ctx.path(&name), &SCATTER_HEADER, rows)?;
        record.artifacts.push(name);
        let converged = points.iter().filter(|p| p.compl_dev_db < spec.converged_db).count();
        record.metric(format!("{}.converged", mode_name(mode)), converged as f64);
        if let Some(g) = minima_gap(&points, spec.converged_db) {
            record.metric(format!("{}.gap_db", mode_name(mode)), g);
        }
    }
    Ok(record)
}

/// Recomputes the metrics of a finished run from its CSV artifacts and
/// checks them against `record.json`.
fn report(ctx: &RunContext) -> Result<RunRecord, HarnessError> {
    let dir = ctx.input.clone().unwrap_or_else(|| ctx.out_dir.clone());
    let record: RunRecord = read_json(&dir.join(RECORD_FILE))?;
    let recomputed = recompute_metrics(&dir, &record)?;
    for (key, value) in &recomputed {
        let stored = record
            .metrics
            .get(key)
            .ok_or_else(|| HarnessError::Verification(format!("metric {key} missing from record")))?;
        let ok = (stored - value).abs() <= VERIFY_TOL * stored.abs().max(1.0) || stored == value;
        if !ok {
            return Err(HarnessError::Verification(format!(
                "{key}: stored {stored}, recomputed {value}"
            )));
        }
    }
    let mut out = record.clone();
    out.metric("verified_metrics", recomputed.len() as f64);
    Ok(out)
}

fn recompute_metrics(dir: &Path, record: &RunRecord) -> Result<Vec<(String, f64)>, HarnessError> {
    let mut out = Vec::new();
    match record.subcommand.as_str() {
        "retrieve" => {
            let path = dir.join("estimates.csv");
            let recs = read_csv(&path, &ESTIMATE_HEADER)?;
            let mut freqs: Vec<f64> = Vec::new();
            let mut blocks: Vec<(Vec<Complex64>, Vec<Complex64>)> = Vec::new();
            for rec in &recs {
                if rec.get(4).is_none_or(str::is_empty) {
                    return Ok(out);
                }
                let f = parse_f64(&path, rec, 0)?;
                if freqs.last() != Some(&f) {
                    freqs.push(f);
                    blocks.push((Vec::new(), Vec::new()));
                }
                let b = blocks.last_mut().expect("block pushed");
                b.0.push(Complex64::new(parse_f64(&path, rec, 2)?, parse_f64(&path, rec, 3)?));
                b.1.push(Complex64::new(parse_f64(&path, rec, 4)?, parse_f64(&path, rec, 5)?));
            }
            let ff_path = dir.join("farfield.csv");
            let ff = read_csv(&ff_path, &FARFIELD_HEADER)?;
            for (f, (est, truth)) in freqs.iter().zip(&blocks) {
                let k = frequency_index(record, *f).ok_or_else(|| HarnessError::format(&path, "unknown frequency"))?;
                let nf = nf_errors_aligned(&CVec::from_vec(est.clone()), &CVec::from_vec(truth.clone()))?;
                out.push((format!("f{k}.nf_mag_db"), nf.mag_db()));
                out.push((format!("f{k}.nf_compl_db"), nf.compl_db()));
                let mut max_db = f64::NEG_INFINITY;
                for rec in &ff {
                    if parse_f64(&ff_path, rec, 0)? == *f {
                        max_db = max_db.max(parse_f64(&ff_path, rec, 2)?);
                    }
                }
                out.push((format!("f{k}.ff_max_db"), max_db));
            }
        }
        "scatter" => {
            for (mode, name) in [("single", "scatter_single.csv"), ("multi", "scatter_multi.csv")] {
                let path = dir.join(name);
                if !path.exists() {
                    continue;
                }
                let recs = read_csv(&path, &SCATTER_HEADER)?;
                let devs = recs
                    .iter()
                    .map(|r| parse_f64(&path, r, 2))
                    .collect::<Result<Vec<_>, _>>()?;
                let thr = *record
                    .metrics
                    .get("converged_db")
                    .ok_or_else(|| HarnessError::Verification("metric converged_db missing from record".into()))?;
                let conv = devs.iter().filter(|d| **d < thr).count();
                out.push((format!("{mode}.converged"), conv as f64));
            }
        }
        "count-independent" => {
            for name in &record.artifacts {
                let path = dir.join(name);
                let recs = read_csv(&path, &["M", "count"])?;
                let last = recs.last().ok_or_else(|| HarnessError::format(&path, "empty curve"))?;
                let key = format!(
                    "{}.saturation",
                    name.trim_start_matches("independence_").trim_end_matches(".csv")
                );
                out.push((key, parse_f64(&path, last, 1)?));
            }
        }
        _ => {}
    }
    Ok(out)
}

/// Frequency index `k` of a retrieve record, from its `f{k}.freq_hz` metrics.
fn frequency_index(record: &RunRecord, f: f64) -> Option<usize> {
    record.metrics.iter().find_map(|(key, v)| {
        let k = key.strip_prefix('f')?.strip_suffix(".freq_hz")?;
        (*v == f).then(|| k.parse().ok()).flatten()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig::from_toml(
            r#"
            seed = 4
            [aut]
            kind = "hull"
            n_dipoles = 8
            radius = 0.05
            [[surfaces]]
            kind = "fibonacci-sphere"
            n_locations = 10
            radius = 0.5
            [frequencies]
            values = [3.0e9, 3.5e9]
            "#,
        )
        .unwrap()
    }

    #[test]
    fn synthetic_shapes_and_noise_free_truth() {
        let syn = build_synthetic(&small()).unwrap();
        assert_eq!(syn.labels.len(), 20);
        assert_eq!(syn.forwards.len(), 2);
        assert!(syn.forwards.iter().all(|a| a.shape() == (20, 8)));
        assert_eq!(syn.measured, syn.truth);
    }

    #[test]
    fn probe_array_labels_match_rows() {
        let mut cfg = small();
        cfg.probe = ProbeSpec::Array {
            separation: 0.05,
            displacement: multifreq_core::forward::Displacement::Alternate,
        };
        let syn = build_synthetic(&cfg).unwrap();
        assert_eq!(syn.labels.len(), 80);
        assert_eq!(syn.forwards[0].nrows(), 80);
    }

    #[test]
    fn noise_follows_the_configured_level() {
        let mut cfg = small();
        cfg.noise_level = 0.1;
        let syn = build_synthetic(&cfg).unwrap();
        for (m, t) in syn.measured.iter().zip(&syn.truth) {
            let rel = (m - t).norm() / t.norm();
            assert!(rel > 0.03 && rel < 0.3, "{rel}");
        }
    }

    #[test]
    fn frequency_index_reads_record_keys() {
        let mut rec = RunRecord::start("retrieve", &small());
        rec.metric("f0.freq_hz", 3e9);
        rec.metric("f1.freq_hz", 3.5e9);
        rec.metric("f1.nf_mag_db", -40.0);
        assert_eq!(frequency_index(&rec, 3.5e9), Some(1));
        assert_eq!(frequency_index(&rec, 4e9), None);
    }

    #[test]
    fn report_needs_a_record() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext {
            config: None,
            out_dir: dir.path().to_path_buf(),
            input: None,
        };
        assert_eq!(run(Subcommand::Report, &ctx).unwrap_err().exit_code(), 4);
        assert_eq!(run(Subcommand::Retrieve, &ctx).unwrap_err().exit_code(), 2);
    }
}
