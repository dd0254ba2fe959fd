use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use occtraj::harness::{
    aggregate, aggregate_csv_record, format_row, load_records, run_experiment, run_sweep, verify_environment,
    verify_records, write_aggregate_csv, AggregateRow, ConfigFile, RunRecord, SweepKind, VerifyReport,
    AGGREGATE_CSV_HEADER,
};
use occtraj::mdp::build_gridworld;
use occtraj::metrics::{omr_k, omr_k_max_start};

use crate::svg;
use crate::{AnalyzeArgs, BackendArg, ExportArgs, Format, RunArgs, SourceArgs, SweepArgs, TuningArgs, VerifyArgs};

pub enum CliError {
    Usage(String),
    Core(occtraj::Error),
    Io(PathBuf, std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(occtraj::Error::Io { .. } | occtraj::Error::Record { .. }) => 3,
            CliError::Core(_) => 1,
            CliError::Io(..) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl From<occtraj::Error> for CliError {
    fn from(e: occtraj::Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

const VERIFY_FAILED: u8 = 2;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(path.to_path_buf(), e.into()))
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io(path.to_path_buf(), e.into())
}

fn json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize") + "\n"
}

fn tuning_overrides(t: &TuningArgs) -> Vec<String> {
    let mut all = t.overrides.clone();
    if let Some(seed) = t.seed {
        all.push(format!("base_seed={seed}"));
    }
    if let Some(trials) = t.trials {
        all.push(format!("trials={trials}"));
    }
    if let Some(b) = t.backend {
        all.push(match b {
            BackendArg::Exact => "backend=\"exact_w1\"".into(),
            BackendArg::Otdd => "backend=\"otdd\"".into(),
        });
    }
    if let Some(m) = t.rollouts {
        all.push(format!("rollouts={m}"));
    }
    all
}

fn load_source(s: &SourceArgs) -> Result<Option<ConfigFile>> {
    let overrides = tuning_overrides(&s.tuning);
    Ok(match (&s.config, &s.preset) {
        (Some(path), _) => Some(ConfigFile::load(path, &overrides)?),
        (None, Some(name)) => Some(ConfigFile::from_preset(name, &overrides)?),
        (None, None) if !overrides.is_empty() => {
            return Err(CliError::Usage("overrides need --config or --preset".into()));
        }
        (None, None) => None,
    })
}

fn esl_chart(title: &str, rows: &[(String, &AggregateRow)]) -> String {
    let bars: Vec<(String, f64, f64)> = rows
        .iter()
        .map(|(label, r)| (label.clone(), r.esl.mean.unwrap_or(0.0), r.esl.std.unwrap_or(0.0)))
        .collect();
    svg::bar_chart(title, "mean ESL", &bars)
}

/// Writes `<stem>.csv` (label column first), `<stem>.json` and `<stem>_esl.svg` as requested.
fn write_labeled(
    dir: &Path,
    stem: &str,
    label: &str,
    rows: &[(String, &AggregateRow)],
    formats: &[Format],
) -> Result<()> {
    if formats.contains(&Format::Csv) {
        let path = dir.join(format!("{stem}.csv"));
        let mut w = csv_writer(&path)?;
        let mut header = vec![label];
        header.extend(AGGREGATE_CSV_HEADER);
        w.write_record(&header).map_err(csv_io(&path))?;
        for (l, r) in rows {
            let mut cells = vec![l.clone()];
            cells.extend(aggregate_csv_record(r));
            w.write_record(&cells).map_err(csv_io(&path))?;
        }
        w.flush().map_err(|e| CliError::Io(path.clone(), e))?;
    }
    if formats.contains(&Format::Json) {
        let items: Vec<serde_json::Value> = rows
            .iter()
            .map(|(l, r)| serde_json::json!({ label: l, "row": r }))
            .collect();
        write_file(&dir.join(format!("{stem}.json")), &json(&items))?;
    }
    if formats.contains(&Format::Svg) {
        write_file(&dir.join(format!("{stem}_esl.svg")), &esl_chart(stem, rows))?;
    }
    Ok(())
}

pub fn run(a: RunArgs) -> Result<u8> {
    let file =
        load_source(&a.source)?.ok_or_else(|| CliError::Usage("run needs --config PATH or --preset NAME".into()))?;
    let cfg = file.resolve()?;
    let out = a.out.unwrap_or_else(|| cfg.output_dir.join(&cfg.name));
    create_dir(&out)?;
    write_file(&out.join("config.toml"), &file.to_toml())?;
    let records_path = out.join("records.jsonl");
    let records = run_experiment(&cfg, Some(&records_path))?;
    let row = aggregate(&records)?;
    if a.format.contains(&Format::Csv) {
        let path = out.join("aggregate.csv");
        let f = fs::File::create(&path).map_err(|e| CliError::Io(path.clone(), e))?;
        write_aggregate_csv(std::slice::from_ref(&row), f).map_err(|e| CliError::Io(path.clone(), e))?;
    }
    if a.format.contains(&Format::Json) {
        write_file(&out.join("aggregate.json"), &json(&row))?;
    }
    if a.format.contains(&Format::Svg) {
        write_file(
            &out.join("esl.svg"),
            &esl_chart(&cfg.name, &[(row.algorithm_id.clone(), &row)]),
        )?;
    }
    let summary = format!("{}\n{}\n", cfg.name, format_row(&row));
    write_file(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!("wrote {} records to {}", records.len(), out.display());
    Ok(0)
}

pub fn sweep(a: SweepArgs) -> Result<u8> {
    let kind = SweepKind::from_str(&a.kind)?;
    let out = a
        .out
        .unwrap_or_else(|| PathBuf::from("results").join(format!("sweep-{}", a.kind)));
    create_dir(&out)?;
    let rows = run_sweep(kind, &tuning_overrides(&a.tuning), Some(&out))?;
    let labeled: Vec<(String, &AggregateRow)> = rows.iter().map(|r| (r.setting.clone(), &r.row)).collect();
    write_labeled(&out, "sweep", "setting", &labeled, &a.format)?;
    for r in &rows {
        println!("{:<18} {}", r.setting, format_row(&r.row));
    }
    println!("wrote {} settings to {}", rows.len(), out.display());
    Ok(0)
}

fn load_nonempty(path: &Path) -> Result<Vec<RunRecord>> {
    let records = load_records(path)?;
    if records.is_empty() {
        return Err(CliError::Usage(format!("{}: no records", path.display())));
    }
    Ok(records)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn slug(run_id: &str) -> String {
    run_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn analyze(a: AnalyzeArgs) -> Result<u8> {
    let records = load_nonempty(&a.records)?;
    let out = a
        .out
        .unwrap_or_else(|| a.records.parent().unwrap_or_else(|| Path::new(".")).join("analysis"));
    create_dir(&out)?;
    let measured: Vec<&RunRecord> = records.iter().filter(|r| r.is_ok() && r.geometry.is_some()).collect();
    if measured.len() < records.len() {
        eprintln!("skipping {} failed runs", records.len() - measured.len());
    }

    if a.format.contains(&Format::Csv) {
        let path = out.join("runs.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["run_id", "k", "x_k", "y_k", "delta_k", "return"])
            .map_err(csv_io(&path))?;
        for r in &measured {
            let g = r.geometry.as_ref().expect("filtered");
            let deltas = g.deltas();
            for (k, x) in g.to_reference.iter().enumerate() {
                w.write_record([
                    r.run_id.clone(),
                    k.to_string(),
                    x.to_string(),
                    cell(g.stepwise.get(k).copied()),
                    cell(deltas.get(k).copied()),
                    cell(r.returns.get(k).copied()),
                ])
                .map_err(csv_io(&path))?;
            }
        }
        w.flush().map_err(|e| CliError::Io(path.clone(), e))?;

        let path = out.join("omr_tail.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["run_id", "i", "kappa"]).map_err(csv_io(&path))?;
        for r in &measured {
            let g = r.geometry.as_ref().expect("filtered");
            for i in 0..=omr_k_max_start(g.n_updates()) {
                w.write_record([r.run_id.clone(), i.to_string(), cell(omr_k(g, i)?)])
                    .map_err(csv_io(&path))?;
            }
        }
        w.flush().map_err(|e| CliError::Io(path.clone(), e))?;
    }

    if a.format.contains(&Format::Svg) {
        for r in &measured {
            let g = r.geometry.as_ref().expect("filtered");
            let dir = out.join("plots").join(slug(&r.run_id));
            create_dir(&dir)?;
            let xs: Vec<(f64, f64)> = g.to_reference.iter().enumerate().map(|(k, x)| (k as f64, *x)).collect();
            let ys: Vec<(f64, f64)> = g.stepwise.iter().enumerate().map(|(k, y)| (k as f64, *y)).collect();
            let kappa: Vec<(f64, f64)> = (0..=omr_k_max_start(g.n_updates()))
                .filter_map(|i| omr_k(g, i).ok().flatten().map(|v| (i as f64, v)))
                .collect();
            let xy: Vec<(f64, f64, f64)> = g
                .stepwise
                .iter()
                .enumerate()
                .map(|(k, y)| (g.to_reference[k], *y, k as f64))
                .collect();
            let visits: Vec<f64> = r.state_visits.iter().map(|&v| v as f64).collect();
            let id = &r.run_id;
            write_file(
                &dir.join("distance_to_reference.svg"),
                &svg::line_plot(&format!("{id}: distance to reference"), "update k", "x_k", &xs),
            )?;
            write_file(
                &dir.join("stepwise_distance.svg"),
                &svg::line_plot(&format!("{id}: stepwise distance"), "update k", "y_k", &ys),
            )?;
            write_file(
                &dir.join("omr_tail.svg"),
                &svg::line_plot(
                    &format!("{id}: OMR over the tail from i"),
                    "tail start i",
                    "κ(i)",
                    &kappa,
                ),
            )?;
            write_file(
                &dir.join("xy_scatter.svg"),
                &svg::scatter_colored(&format!("{id}: (x_k, y_k) colored by k"), "x_k", "y_k", &xy),
            )?;
            write_file(
                &dir.join("state_visits.svg"),
                &svg::heatmap(&format!("{id}: state visits"), r.grid_width, &visits),
            )?;
        }
    }
    println!("analyzed {} runs into {}", measured.len(), out.display());
    Ok(0)
}

fn print_report(report: &VerifyReport) {
    for c in &report.checks {
        println!(
            "{:<24} passed {:>5}  failed {:>5}  skipped {:>5}",
            c.invariant, c.passed, c.failed, c.skipped
        );
        for v in &c.violations {
            println!("  {} (seed {}): {}", v.run_id, v.seed, v.detail);
        }
    }
    if let Some(min) = report.min_gap {
        println!("η_sub bound slack (min {min:.6}):");
        for b in &report.gap_histogram {
            println!("  [{:>10.4}, {:>10.4})  {}", b.lo, b.hi, b.count);
        }
    }
}

pub fn verify(a: VerifyArgs) -> Result<u8> {
    let report = if !a.records.is_empty() {
        if a.source.config.is_some() || a.source.preset.is_some() {
            return Err(CliError::Usage(
                "give either record files or --config/--preset, not both".into(),
            ));
        }
        let mut records = Vec::new();
        for path in &a.records {
            records.extend(load_nonempty(path)?);
        }
        verify_records(&records)
    } else {
        let file = load_source(&a.source)?
            .ok_or_else(|| CliError::Usage("verify needs record files, --config PATH or --preset NAME".into()))?;
        let cfg = file.resolve()?;
        let records = run_experiment(&cfg, None)?;
        let mut report = verify_records(&records);
        report.checks.push(verify_environment(&build_gridworld(&cfg.env)?));
        report
    };
    print_report(&report);
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("verify.json"), &json(&report))?;
    }
    if report.all_passed() {
        println!("all checks passed");
        Ok(0)
    } else {
        eprintln!("verification failed: {}", report.failed_invariants().join(", "));
        Ok(VERIFY_FAILED)
    }
}

pub fn export(a: ExportArgs) -> Result<u8> {
    let mut groups: Vec<(String, Vec<RunRecord>)> = Vec::new();
    for path in &a.records {
        for r in load_nonempty(path)? {
            let key = format!("{}:{}", r.experiment, r.algorithm_id);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(r),
                None => groups.push((key, vec![r])),
            }
        }
    }
    create_dir(&a.out)?;
    let rows: Vec<(String, AggregateRow)> = groups
        .iter()
        .map(|(_, recs)| Ok((recs[0].experiment.clone(), aggregate(recs)?)))
        .collect::<Result<_>>()?;
    let labeled: Vec<(String, &AggregateRow)> = rows.iter().map(|(l, r)| (l.clone(), r)).collect();
    write_labeled(&a.out, "aggregate", "experiment", &labeled, &a.format)?;

    if a.format.contains(&Format::Csv) {
        let path = a.out.join("runs.csv");
        let mut w = csv_writer(&path)?;
        w.write_record([
            "run_id",
            "experiment",
            "algo",
            "trial",
            "seed",
            "status",
            "converged",
            "uc",
            "success",
            "n_updates",
            "esl",
            "omr",
            "eta_sub",
            "bound_gap",
        ])
        .map_err(csv_io(&path))?;
        for r in groups.iter().flat_map(|(_, v)| v) {
            let idx = r.indices.as_ref();
            w.write_record([
                r.run_id.clone(),
                r.experiment.clone(),
                r.algorithm_id.clone(),
                r.trial.to_string(),
                r.seed.to_string(),
                if r.is_ok() { "ok".into() } else { "failed".into() },
                r.converged.to_string(),
                r.updates_to_convergence.map(|u| u.to_string()).unwrap_or_default(),
                r.success.to_string(),
                r.n_updates().to_string(),
                cell(idx.and_then(|i| i.esl)),
                cell(idx.and_then(|i| i.omr)),
                cell(idx.and_then(|i| i.eta_sub)),
                cell(idx.and_then(|i| i.bound_gap)),
            ])
            .map_err(csv_io(&path))?;
        }
        w.flush().map_err(|e| CliError::Io(path.clone(), e))?;
    }
    for (label, row) in &rows {
        println!("{label:<24} {}", format_row(row));
    }
    Ok(0)
}
