use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use voltzone::artifacts::{
    config_hash, correlation_csv, from_json, ibr_log_csv, read_ibr_log_csv, read_trace_csv, read_vr_log_csv,
    sha256_hex, to_json, trace_csv, vlsm_csv, voltages_csv, vr_log_csv, CriticalDocument, Manifest, MetricsDocument,
    PartitionDocument, SensitivityDocument,
};
use voltzone::critical::{attach, finalize, monitored_zones, monte_carlo_extremes, MonteCarloOptions, Thresholds};
use voltzone::fixtures::{coordinated_delays, synthetic_day};
use voltzone::powerflow::{solve, OperatingPoint};
use voltzone::profiles::ProfileLibrary;
use voltzone::scenario::{HourWindow, ScenarioSource};
use voltzone::sensitivity::{sensitivity_study, CorrelationMatrix, VlsmQ};
use voltzone::sim::{self, ControlInputs, ControlMode, VrAction};
use voltzone::vr::settle_taps;
use voltzone::zoning::{partition, ZonePartition};
use voltzone::{parse_feeder, Error, FeederModel, Result};

use crate::config::ConfigDocument;
use crate::{Cli, Command, ModeArg};

const SENSITIVITY_JSON: &str = "sensitivity.json";
const VLSM_CSV: &str = "vlsm.csv";
const CORRELATION_CSV: &str = "correlation.csv";
const METRICS_JSON: &str = "metrics.json";
const IBR_LOG_CSV: &str = "ibr_log.csv";
const VR_LOG_CSV: &str = "vr_log.csv";
const TRACE_CSV: &str = "trace.csv";

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?).map_err(|_| Error::Data(format!("{} is not UTF-8", path.display())))
}

fn in_context(path: &Path, e: Error) -> Error {
    match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        Error::Csv(c) => Error::Data(format!("{}: {c}", path.display())),
        other => other,
    }
}

fn load_feeder(path: &Path) -> Result<FeederModel> {
    let f = parse_feeder(&read_text(path)?).map_err(|e| in_context(path, e))?;
    info!("feeder {}: {f}", path.display());
    Ok(f)
}

fn load_profiles(path: &Path) -> Result<(ProfileLibrary, String)> {
    let bytes = read_bytes(path)?;
    let lib = ProfileLibrary::read_csv(bytes.as_slice()).map_err(|e| in_context(path, e))?;
    Ok((lib, sha256_hex(&bytes)))
}

fn load_doc<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    from_json(&read_text(path)?).map_err(|e| in_context(path, e))
}

fn sibling(doc: &Path, name: &str) -> PathBuf {
    doc.parent().unwrap_or(Path::new(".")).join(name)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Writes outputs, refusing to overwrite any of the inputs.
struct Writer {
    inputs: Vec<PathBuf>,
}

impl Writer {
    fn new(inputs: &[&Path]) -> Self {
        Writer {
            inputs: inputs.iter().filter_map(|p| fs::canonicalize(p).ok()).collect(),
        }
    }

    fn write(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Ok(c) = fs::canonicalize(path) {
            if self.inputs.contains(&c) {
                return Err(Error::Config(format!("refusing to overwrite input {}", path.display())));
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, bytes).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
        info!("wrote {}", path.display());
        Ok(())
    }
}

fn set_workers(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<ConfigDocument> {
    match path {
        Some(p) => ConfigDocument::parse(&read_text(p)?),
        None => Ok(ConfigDocument::default()),
    }
}

/// A sensitivity document with its tables.
struct Sensitivity {
    doc: SensitivityDocument,
    vlsm: VlsmQ,
    correlation: CorrelationMatrix,
}

fn load_sensitivity(feeder: &FeederModel, path: &Path) -> Result<Sensitivity> {
    let doc: SensitivityDocument = load_doc(path)?;
    let vlsm_bytes = read_bytes(&sibling(path, &doc.vlsm_csv))?;
    let corr_bytes = read_bytes(&sibling(path, &doc.correlation_csv))?;
    let (vlsm, correlation) = doc
        .load(feeder, &vlsm_bytes, &corr_bytes)
        .map_err(|e| in_context(path, e))?;
    Ok(Sensitivity { doc, vlsm, correlation })
}

fn load_partition(feeder: &FeederModel, path: &Path) -> Result<(PartitionDocument, ZonePartition)> {
    let doc: PartitionDocument = load_doc(path)?;
    let part = doc.to_partition(feeder).map_err(|e| in_context(path, e))?;
    Ok((doc, part))
}

pub fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    let config_path = cli.config.clone();
    let extra: Vec<&Path> = config_path.iter().map(PathBuf::as_path).collect();
    match cli.command {
        Command::Validate { feeder, profiles } => {
            let f = load_feeder(&feeder.feeder)?;
            println!("{}: {f}", feeder.feeder.display());
            println!("phase nodes: {}", f.nodes().len());
            println!("hash: {}", f.content_hash());
            if let Some(p) = profiles {
                let (lib, _) = load_profiles(&p)?;
                lib.check_feeder(&f)?;
                println!(
                    "{}: {} profiles x {} minutes",
                    p.display(),
                    lib.names().len(),
                    lib.minutes()
                );
            }
            Ok(())
        }
        Command::Powerflow {
            feeder,
            profiles,
            minute,
            load_mult,
            pv_mult,
            settle,
            out,
        } => {
            let f = load_feeder(&feeder.feeder)?;
            let op = match (profiles.as_deref(), minute) {
                (Some(p), Some(m)) => {
                    let (lib, _) = load_profiles(p)?;
                    lib.check_feeder(&f)?;
                    if m >= lib.minutes() {
                        return Err(Error::Config(format!(
                            "minute {m} is past the {} profile rows",
                            lib.minutes()
                        )));
                    }
                    lib.operating_point(&f, m)
                }
                _ => {
                    if !(load_mult >= 0.0 && pv_mult >= 0.0) {
                        return Err(Error::Config("multipliers must be non-negative".into()));
                    }
                    OperatingPoint::scaled(&f, load_mult, pv_mult)
                }
            };
            let inj = op.injections(&f);
            let (taps, state) = if settle {
                settle_taps(&f, &inj, &f.initial_taps())?
            } else {
                let taps = f.initial_taps();
                let st = solve(&f, &inj, &taps)?;
                (taps, st)
            };
            let (hi, lo) = state.extremes();
            info!(
                "converged in {} iterations; v in [{lo:.4}, {hi:.4}] pu; taps {taps:?}",
                state.iterations
            );
            let bytes = voltages_csv(&f, &state)?;
            match out {
                Some(path) => {
                    let mut inputs: Vec<&Path> = vec![&feeder.feeder];
                    inputs.extend(profiles.as_deref());
                    Writer::new(&inputs).write(&path, &bytes)
                }
                None => {
                    print!("{}", String::from_utf8_lossy(&bytes));
                    Ok(())
                }
            }
        }
        Command::Sensitivity {
            feeder,
            scenarios,
            seed,
            delta_q_kvar,
            mode,
            workers,
            out_dir,
        } => {
            set_workers(workers)?;
            let mut section = config.sensitivity;
            if let Some(v) = scenarios {
                section.scenarios = v;
            }
            if let Some(v) = seed {
                section.seed = v;
            }
            if let Some(v) = delta_q_kvar {
                section.delta_q_kvar = v;
            }
            if let Some(v) = mode {
                section.mode = v;
            }
            let f = load_feeder(&feeder.feeder)?;
            let study = section.study();
            let bundle = sensitivity_study(&f, &ScenarioSource::Uniform(section.ranges()), &study)?;
            let vlsm = vlsm_csv(&f, &bundle.vlsm)?;
            let corr = correlation_csv(&f, &bundle.correlation)?;
            let manifest = Manifest::new("sensitivity", &f, config_hash(&section), Some(section.seed))
                .input("feeder", path_str(&feeder.feeder), f.content_hash())
                .output(VLSM_CSV, &vlsm)
                .output(CORRELATION_CSV, &corr)
                .seal();
            let doc = SensitivityDocument {
                manifest,
                delta_q_kvar: study.delta_q_kvar,
                scenarios: study.scenarios,
                mode: study.mode.into(),
                vlsm_csv: VLSM_CSV.into(),
                correlation_csv: CORRELATION_CSV.into(),
            };
            let mut inputs: Vec<&Path> = vec![&feeder.feeder];
            inputs.extend(&extra);
            let w = Writer::new(&inputs);
            w.write(&out_dir.join(VLSM_CSV), &vlsm)?;
            w.write(&out_dir.join(CORRELATION_CSV), &corr)?;
            w.write(&out_dir.join(SENSITIVITY_JSON), to_json(&doc).as_bytes())
        }
        Command::Partition {
            feeder,
            sensitivity,
            alpha,
            out,
        } => {
            let mut section = config.partition;
            if let Some(a) = alpha {
                section.alpha = a;
            }
            let f = load_feeder(&feeder.feeder)?;
            let s = load_sensitivity(&f, &sensitivity)?;
            let part = partition(&f, &s.correlation, section.alpha)?;
            info!(
                "{} inverter zones, {} regulator zones",
                part.zone_count(),
                part.vr.len()
            );
            let manifest = Manifest::new("partition", &f, config_hash(&section), None)
                .input("feeder", path_str(&feeder.feeder), f.content_hash())
                .input("sensitivity", path_str(&sensitivity), s.doc.manifest.hash.clone())
                .seal();
            let doc = PartitionDocument::new(&f, &part, manifest);
            let mut inputs: Vec<&Path> = vec![&feeder.feeder, &sensitivity];
            inputs.extend(&extra);
            Writer::new(&inputs).write(&out, to_json(&doc).as_bytes())
        }
        Command::CriticalNodes {
            feeder,
            partition: partition_path,
            profiles,
            runs,
            seed,
            th_percent,
            delta_v_th,
            workers,
            out,
        } => {
            set_workers(workers)?;
            let mut section = config.critical_nodes;
            if let Some(v) = runs {
                section.runs = v;
            }
            if let Some(v) = seed {
                section.seed = v;
            }
            if let Some(v) = th_percent {
                section.th_percent = v;
            }
            if let Some(v) = delta_v_th {
                section.delta_v_th = v;
            }
            let f = load_feeder(&feeder.feeder)?;
            let (pdoc, part) = load_partition(&f, &partition_path)?;
            let (lib, profiles_hash) = load_profiles(&profiles)?;
            lib.check_feeder(&f)?;
            let (h0, h1) = section.window_hours;
            let source = ScenarioSource::Profiles {
                library: &lib,
                window: HourWindow::hours(h0, h1),
            };
            let opts = MonteCarloOptions {
                runs: section.runs,
                seed: section.seed,
                settle_regulators: section.settle_regulators,
            };
            let thresholds = Thresholds {
                th_percent: section.th_percent,
                delta_v_th: section.delta_v_th,
            };
            let record = monte_carlo_extremes(&f, &monitored_zones(&part), &source, &opts)?;
            let set = finalize(&f, &record, &thresholds)?;
            info!("{} critical buses", set.distinct_buses().len());
            let manifest = Manifest::new("critical-nodes", &f, config_hash(&section), Some(section.seed))
                .input("feeder", path_str(&feeder.feeder), f.content_hash())
                .input("partition", path_str(&partition_path), pdoc.manifest.hash.clone())
                .input("profiles", path_str(&profiles), profiles_hash)
                .seal();
            let doc = CriticalDocument::new(&f, &set, manifest);
            let mut inputs: Vec<&Path> = vec![&feeder.feeder, &partition_path, &profiles];
            inputs.extend(&extra);
            Writer::new(&inputs).write(&out, to_json(&doc).as_bytes())
        }
        Command::Simulate {
            feeder,
            profiles,
            mode,
            staggered_delays,
            sensitivity,
            partition: partition_path,
            critical,
            margin,
            start_minute,
            minutes,
            out_dir,
        } => {
            let mut cfg = config.simulate;
            if let Some(m) = mode {
                cfg.mode = match m {
                    ModeArg::Local => ControlMode::Local,
                    ModeArg::Coordinated => ControlMode::Coordinated,
                };
            }
            if let Some(v) = margin {
                cfg.tuner.margin = v;
            }
            if let Some(v) = start_minute {
                cfg.start_minute = v;
            }
            if let Some(v) = minutes {
                cfg.minutes = v;
            }
            let f = load_feeder(&feeder.feeder)?;
            if staggered_delays {
                let mut devices = coordinated_delays(&f);
                for (id, d) in &cfg.devices {
                    let e = devices.entry(id.clone()).or_default();
                    e.v_set = d.v_set.or(e.v_set);
                    e.deadband = d.deadband.or(e.deadband);
                    e.time_delay = d.time_delay.or(e.time_delay);
                }
                cfg.devices = devices;
            }
            let (lib, profiles_hash) = load_profiles(&profiles)?;
            let mut manifest = Manifest::new("simulate", &f, config_hash(&cfg), Some(cfg.seed))
                .input("feeder", path_str(&feeder.feeder), f.content_hash())
                .input("profiles", path_str(&profiles), profiles_hash);
            let mut inputs: Vec<&Path> = vec![&feeder.feeder, &profiles];
            inputs.extend(&extra);

            let loaded = if cfg.mode == ControlMode::Coordinated {
                let (Some(sp), Some(pp), Some(cp)) = (&sensitivity, &partition_path, &critical) else {
                    return Err(Error::Config(
                        "coordinated mode needs --sensitivity, --partition and --critical".into(),
                    ));
                };
                let s = load_sensitivity(&f, sp)?;
                let (pdoc, mut part) = load_partition(&f, pp)?;
                pdoc.manifest
                    .check_input("sensitivity", &s.doc.manifest.hash)
                    .map_err(|e| in_context(pp, e))?;
                let cdoc: CriticalDocument = load_doc(cp)?;
                cdoc.manifest
                    .check_input("partition", &pdoc.manifest.hash)
                    .map_err(|e| in_context(cp, e))?;
                let set = cdoc.to_set(&f).map_err(|e| in_context(cp, e))?;
                attach(&mut part, &set)?;
                manifest = manifest
                    .input("sensitivity", path_str(sp), s.doc.manifest.hash.clone())
                    .input("partition", path_str(pp), pdoc.manifest.hash.clone())
                    .input("critical", path_str(cp), cdoc.manifest.hash.clone());
                inputs.extend([sp.as_path(), pp.as_path(), cp.as_path()]);
                Some((s, part))
            } else {
                None
            };
            let control = loaded.as_ref().map(|(s, part)| ControlInputs {
                partition: part,
                vlsm: &s.vlsm,
                correlation: &s.correlation,
            });
            let out = sim::run(&f, &lib, control, &cfg)?;
            info!(
                "N_V {} N_VR {} Q_IBR {:.1} kvarh",
                out.metrics.n_v, out.metrics.n_vr, out.metrics.q_ibr_kvarh
            );
            let ibr = ibr_log_csv(&out.ibr_log)?;
            let vr = vr_log_csv(&out.vr_log)?;
            let trace = trace_csv(&f, &out.trace)?;
            let manifest = manifest
                .output(IBR_LOG_CSV, &ibr)
                .output(VR_LOG_CSV, &vr)
                .output(TRACE_CSV, &trace)
                .seal();
            let doc = MetricsDocument {
                manifest,
                metrics: out.metrics,
            };
            let w = Writer::new(&inputs);
            w.write(&out_dir.join(IBR_LOG_CSV), &ibr)?;
            w.write(&out_dir.join(VR_LOG_CSV), &vr)?;
            w.write(&out_dir.join(TRACE_CSV), &trace)?;
            w.write(&out_dir.join(METRICS_JSON), to_json(&doc).as_bytes())
        }
        Command::Report { runs, out_dir } => report(&runs, &out_dir),
        Command::SynthProfiles { feeder, seed, out } => {
            let f = load_feeder(&feeder.feeder)?;
            let lib = synthetic_day(&f, seed);
            let mut bytes = Vec::new();
            lib.write_csv(&mut bytes)?;
            Writer::new(&[&feeder.feeder]).write(&out, &bytes)
        }
    }
}

fn case_label(doc: &MetricsDocument) -> String {
    match doc.metrics.mode {
        ControlMode::Local => "base".to_string(),
        ControlMode::Coordinated => format!("dV={:.3}", doc.metrics.margin),
    }
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Data(format!("csv buffer: {e}")))
}

fn report(runs: &[PathBuf], out_dir: &Path) -> Result<()> {
    let mut cases = Vec::new();
    for dir in runs {
        let path = dir.join(METRICS_JSON);
        let doc: MetricsDocument = load_doc(&path)?;
        doc.manifest.check_seal().map_err(|e| in_context(&path, e))?;
        let mut files = BTreeMap::new();
        for name in [IBR_LOG_CSV, VR_LOG_CSV, TRACE_CSV] {
            let bytes = read_bytes(&dir.join(name))?;
            doc.manifest
                .check_output(name, &bytes)
                .map_err(|e| in_context(&dir.join(name), e))?;
            files.insert(name, bytes);
        }
        if let Some((_, first)) = cases.first() {
            let first: &MetricsDocument = first;
            if first.manifest.feeder_hash != doc.manifest.feeder_hash {
                return Err(Error::Stale(format!(
                    "{} was simulated on a different feeder than {}",
                    dir.display(),
                    runs[0].display()
                )));
            }
        }
        let trace = read_trace_csv(files[TRACE_CSV].as_slice())?;
        let vr_log = read_vr_log_csv(files[VR_LOG_CSV].as_slice())?;
        // Parsed only to reject a malformed log.
        read_ibr_log_csv(files[IBR_LOG_CSV].as_slice())?;
        cases.push(((trace, vr_log), doc));
    }

    let labels: Vec<String> = cases.iter().map(|(_, d)| case_label(d)).collect();
    let mut summary = Vec::new();
    let mut envelopes = Vec::new();
    let mut taps = Vec::new();
    let mut zone_kvar = Vec::new();
    for (label, ((trace, vr_log), doc)) in labels.iter().zip(&cases) {
        let m = &doc.metrics;
        summary.push(vec![
            label.clone(),
            format!("{:?}", m.mode).to_lowercase(),
            format!("{}", m.margin),
            m.minutes.to_string(),
            m.n_v.to_string(),
            m.n_vr.to_string(),
            format!("{:.3}", m.q_ibr_kvarh),
            format!("{:.6}", m.v_min),
            format!("{:.6}", m.v_max),
        ]);
        for r in trace {
            envelopes.push(vec![
                label.clone(),
                r.minute.to_string(),
                format!("{:.6}", r.v_min),
                format!("{:.6}", r.v_max),
                r.violations.to_string(),
            ]);
        }
        for e in vr_log.iter().filter(|e| e.action == VrAction::Tap) {
            taps.push(vec![
                label.clone(),
                e.time_s.to_string(),
                e.device.clone(),
                e.phase.to_string(),
                e.tap.to_string(),
            ]);
        }
        for (zone, q) in &m.q_by_zone_kvarh {
            zone_kvar.push(vec![label.clone(), zone.clone(), format!("{q:.3}")]);
        }
    }

    let inputs: Vec<PathBuf> = runs.iter().map(|d| d.join(METRICS_JSON)).collect();
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let w = Writer::new(&input_refs);
    w.write(
        &out_dir.join("summary.csv"),
        &csv_bytes(
            &[
                "case",
                "mode",
                "margin",
                "minutes",
                "n_v",
                "n_vr",
                "q_ibr_kvarh",
                "v_min",
                "v_max",
            ],
            &summary,
        )?,
    )?;
    w.write(
        &out_dir.join("envelopes.csv"),
        &csv_bytes(&["case", "minute", "v_min", "v_max", "violations"], &envelopes)?,
    )?;
    w.write(
        &out_dir.join("taps.csv"),
        &csv_bytes(&["case", "time_s", "device", "phase", "tap"], &taps)?,
    )?;
    w.write(
        &out_dir.join("zone_kvar.csv"),
        &csv_bytes(&["case", "zone", "kvarh"], &zone_kvar)?,
    )?;

    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<10} {:>10} {:>6} {:>14}",
        "case", "N_V", "N_VR", "Q_IBR (kvarh)"
    );
    for (label, (_, doc)) in labels.iter().zip(&cases) {
        let m = &doc.metrics;
        let _ = writeln!(table, "{label:<10} {:>10} {:>6} {:>14.1}", m.n_v, m.n_vr, m.q_ibr_kvarh);
    }
    print!("{table}");
    Ok(())
}
