//! Reproducible experiment pipelines configured by one JSON file.
//!
//! Every command writes plain CSV files (and optional SVG plots) into the
//! configured output directory. Identical configurations produce
//! byte-identical files.

pub mod ingest;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deficiency::{write_report_csv, DeficiencyReport, ALPHA};
use crate::diagnostics::{
    assignment_series, assignment_svg, correlation_heatmap_svg, correlation_report_for, sensor_name,
    strongest_covariate, weather_correlation_matrix, write_correlation_csv, Cadence, CorrelationEntry,
};
use crate::error::{Error, Result};
use crate::illustrative::{
    affine_space, generate_illustrative_data, quadratic_space, AffineModel, CurvatureDomain, QuadraticModel,
};
use crate::mixture::{em_fit, cem_fit, read_responsibilities_csv, MixtureConfig, MixtureFit};
use crate::model::{normalized_residuals, Dataset, ForwardModel, ParameterSpace};
use crate::thermal::{
    generate_thermal_measurements, synth_weather, CrossSectionSpec, ThermalConstants, ThermalModel,
    ThermalParams, ThermalScene, ThermalVariant, WeatherSeries, STEPS_PER_DAY,
};

pub use ingest::{ingest_monitoring_csv, ingest_monitoring_reader, Ingested, DEFAULT_SIGMA};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Synthetic data from the analytic ground truth.
    #[default]
    Illustrative,
    /// Synthetic sensor data from the full thermal model.
    ThermalSynthetic,
    /// Sensor data from a monitoring export.
    ThermalData,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    #[default]
    Affine,
    Quadratic,
    ThermalBase,
    ThermalNoIrradiation,
    ThermalHumidity,
}

impl ModelVariant {
    pub fn is_illustrative(self) -> bool {
        self.thermal().is_none()
    }

    pub fn thermal(self) -> Option<ThermalVariant> {
        match self {
            ModelVariant::ThermalBase => Some(ThermalVariant::Base),
            ModelVariant::ThermalNoIrradiation => Some(ThermalVariant::NoIrradiation),
            ModelVariant::ThermalHumidity => Some(ThermalVariant::Humidity),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IllustrativeSettings {
    pub n: usize,
    pub sigma: f64,
    pub curvature: CurvatureDomain,
}

impl Default for IllustrativeSettings {
    fn default() -> Self {
        Self {
            n: 40,
            sigma: 0.05,
            curvature: CurvatureDomain::Real,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThermalSettings {
    pub scene: CrossSectionSpec,
    pub constants: ThermalConstants,
    /// Length of the evaluation window for synthetic weather.
    pub days: usize,
    pub sigma: f64,
    /// Parameters that generate synthetic data, and the forward run of `simulate`.
    pub truth: ThermalParams,
}

impl Default for ThermalSettings {
    fn default() -> Self {
        Self {
            scene: CrossSectionSpec::default().with_edge_length(0.08),
            constants: ThermalConstants::default(),
            days: 30,
            sigma: DEFAULT_SIGMA,
            truth: ThermalParams::truth(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnoseSettings {
    /// Lags for the daily-mean report, in days.
    pub lags_days: Vec<isize>,
    /// Lags for the 4-hour report, in steps.
    pub lags_steps: Vec<isize>,
    /// Tracked cluster (1-based); defaults to the heaviest.
    pub cluster: Option<usize>,
}

impl Default for DiagnoseSettings {
    fn default() -> Self {
        Self {
            lags_days: vec![-2, -1, 0, 1, 2],
            lags_steps: (-6..=6).collect(),
            cluster: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: ModelVariant,
    pub mixture: MixtureConfig,
    /// Seeds data generation; the fits use `seed + 1`.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Also run classification EM.
    pub cem: bool,
    pub svg: bool,
    pub illustrative: IllustrativeSettings,
    pub thermal: ThermalSettings,
    /// Weather CSV; synthetic weather is generated when absent.
    pub weather_path: Option<PathBuf>,
    /// Monitoring export for `thermal-data`.
    pub data_path: Option<PathBuf>,
    /// Residual CSV for `report`; defaults to `<out_dir>/residuals.csv`.
    pub residuals_path: Option<PathBuf>,
    pub diagnose: DiagnoseSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Illustrative,
            model: ModelVariant::Affine,
            mixture: MixtureConfig::default(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            cem: false,
            svg: false,
            illustrative: IllustrativeSettings::default(),
            thermal: ThermalSettings::default(),
            weather_path: None,
            data_path: None,
            residuals_path: None,
            diagnose: DiagnoseSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.mixture.validate()?;
        let thermal_model = self.model.thermal().is_some();
        let thermal_kind = self.kind != ExperimentKind::Illustrative;
        if thermal_model != thermal_kind {
            return Err(Error::invalid(format!(
                "model {:?} does not fit experiment kind {:?}",
                self.model, self.kind
            )));
        }
        if self.kind == ExperimentKind::ThermalData {
            match &self.data_path {
                None => return Err(Error::invalid("thermal-data needs data_path")),
                Some(p) if !p.exists() => {
                    return Err(Error::invalid(format!("data file {} does not exist", p.display())))
                }
                _ => {}
            }
        }
        if let Some(p) = &self.weather_path {
            if !p.exists() {
                return Err(Error::invalid(format!("weather file {} does not exist", p.display())));
            }
        }
        if self.kind == ExperimentKind::Illustrative && self.illustrative.n == 0 {
            return Err(Error::invalid("illustrative n must be at least 1"));
        }
        Ok(())
    }

    fn fit_config(&self, k: usize) -> MixtureConfig {
        MixtureConfig {
            k,
            seed: self.seed.wrapping_add(1),
            ..self.mixture.clone()
        }
    }
}

/// Weather for a thermal run: the configured file, or synthetic weather.
pub fn load_weather(config: &ExperimentConfig) -> Result<WeatherSeries> {
    match &config.weather_path {
        Some(p) => WeatherSeries::load(p),
        None => synth_weather(config.thermal.days, config.seed),
    }
}

/// Everything a fit run computed.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub data: Dataset,
    pub param_names: Vec<String>,
    pub baseline: MixtureFit,
    pub mixture: Option<MixtureFit>,
    pub cem: Option<MixtureFit>,
    /// `(row label, report)`: baseline, clusters, pooled mixture.
    pub reports: Vec<(String, DeficiencyReport)>,
    pub summary: String,
}

impl FitOutcome {
    pub fn report(&self, label: &str) -> Option<&DeficiencyReport> {
        self.reports.iter().find(|(l, _)| l == label).map(|(_, r)| r)
    }
}

/// Generates or loads the data, fits the single-vector baseline and the
/// k-cluster mixture, and writes all reports to `out_dir`.
pub fn cmd_fit(config: &ExperimentConfig) -> Result<FitOutcome> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir)?;
    match config.kind {
        ExperimentKind::Illustrative => {
            let s = &config.illustrative;
            let data = generate_illustrative_data(s.n, s.sigma, config.seed)?;
            match config.model {
                ModelVariant::Affine => run_fit(config, &AffineModel, &affine_space(), data, false),
                _ => run_fit(config, &QuadraticModel, &quadratic_space(s.curvature), data, false),
            }
        }
        ExperimentKind::ThermalSynthetic | ExperimentKind::ThermalData => {
            let variant = config.model.thermal().expect("validated");
            let scene = ThermalScene::build(config.thermal.scene.clone(), config.thermal.constants.clone())?;
            let (weather, data) = if config.kind == ExperimentKind::ThermalSynthetic {
                let weather = load_weather(config)?;
                let data = generate_thermal_measurements(
                    &scene,
                    &config.thermal.truth,
                    &weather,
                    config.thermal.sigma,
                    config.seed,
                )?;
                (weather, data)
            } else {
                let path = config.data_path.as_ref().expect("validated");
                let ingested = ingest_monitoring_csv(path)?;
                let data = ingested.dataset(scene.constants.warmup_steps, config.thermal.sigma)?;
                (ingested.weather, data)
            };
            weather.save(&config.out_dir.join("weather.csv"))?;
            let model = ThermalModel::new(scene, weather, variant);
            run_fit(config, &model, &variant.space(), data, true)
        }
    }
}

fn run_fit<M: ForwardModel>(
    config: &ExperimentConfig,
    model: &M,
    space: &ParameterSpace,
    data: Dataset,
    sensors: bool,
) -> Result<FitOutcome> {
    let out = &config.out_dir;
    data.save(&out.join("data.csv"))?;
    let param_names: Vec<String> = space.names().iter().map(|s| s.to_string()).collect();

    let baseline = em_fit(&data, model, space, &config.fit_config(1))?;
    let base_res = normalized_residuals(model, &data, &baseline.thetas[0])?;
    let mut reports = vec![("baseline".to_string(), DeficiencyReport::from_residuals(&base_res, ALPHA)?)];
    let mut residual_rows: Vec<(String, usize, f64)> =
        base_res.iter().enumerate().map(|(i, r)| ("baseline".to_string(), i, *r)).collect();
    write_fit(&baseline, &data, &out.join("baseline_params.csv"), None)?;

    let k = config.mixture.k;
    let (mixture, cem) = if k > 1 {
        let fit = em_fit(&data, model, space, &config.fit_config(k))?;
        let per_cluster: Vec<Vec<f64>> = fit
            .thetas
            .iter()
            .map(|t| normalized_residuals(model, &data, t))
            .collect::<Result<_>>()?;
        for j in 0..k {
            let members = fit.members(j);
            if members.is_empty() {
                continue;
            }
            let r: Vec<f64> = members.iter().map(|&i| per_cluster[j][i]).collect();
            let label = format!("cluster {}", j + 1);
            reports.push((label.clone(), DeficiencyReport::from_residuals(&r, ALPHA)?));
            residual_rows.extend(members.iter().zip(&r).map(|(&i, v)| (label.clone(), i, *v)));
        }
        let pooled: Vec<f64> = fit.hard_assignment.iter().enumerate().map(|(i, &z)| per_cluster[z][i]).collect();
        reports.push(("mixture".to_string(), DeficiencyReport::from_residuals(&pooled, ALPHA)?));
        residual_rows.extend(pooled.iter().enumerate().map(|(i, v)| ("mixture".to_string(), i, *v)));
        write_fit(&fit, &data, &out.join("mixture_params.csv"), Some(&out.join("responsibilities.csv")))?;
        write_trace(&fit, &out.join("trace.csv"))?;

        let cem = if config.cem {
            let c = cem_fit(&data, model, space, &config.fit_config(k))?;
            write_fit(&c, &data, &out.join("cem_params.csv"), Some(&out.join("cem_assignment.csv")))?;
            Some(c)
        } else {
            None
        };
        (Some(fit), cem)
    } else {
        (None, None)
    };

    write_report_csv(fs::File::create(out.join("deficiency.csv"))?, &reports)?;
    write_residuals(&out.join("residuals.csv"), &residual_rows)?;
    let summary = summary_table(&param_names, &data, &baseline, mixture.as_ref(), &reports, sensors);
    fs::write(out.join("summary.txt"), &summary)?;
    Ok(FitOutcome {
        data,
        param_names,
        baseline,
        mixture,
        cem,
        reports,
        summary,
    })
}

fn write_fit(fit: &MixtureFit, data: &Dataset, params: &Path, resp: Option<&Path>) -> Result<()> {
    fit.write_params_csv(fs::File::create(params)?)?;
    if let Some(p) = resp {
        fit.write_responsibilities_csv(fs::File::create(p)?, data)?;
    }
    Ok(())
}

fn write_trace(fit: &MixtureFit, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "objective"])?;
    w.write_record(["0".to_string(), fit.initial_objective.to_string()])?;
    for (i, v) in fit.trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_residuals(path: &Path, rows: &[(String, usize, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "reading_index", "residual"])?;
    for (m, i, r) in rows {
        w.write_record([m.clone(), i.to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Sensors (by initial) whose readings are mostly hard-assigned to `cluster`.
fn cluster_sensors(fit: &MixtureFit, data: &Dataset, cluster: usize) -> String {
    let n_sensors = data.inputs().iter().map(|x| x.sensor_id + 1).max().unwrap_or(0);
    let mut names = Vec::new();
    for s in 0..n_sensors {
        let (mut hit, mut all) = (0, 0);
        for (x, &z) in data.inputs().iter().zip(&fit.hard_assignment) {
            if x.sensor_id == s {
                all += 1;
                hit += usize::from(z == cluster);
            }
        }
        if 2 * hit > all {
            names.push(sensor_name(s).chars().next().unwrap_or('?').to_string());
        }
    }
    if names.is_empty() {
        "-".to_string()
    } else {
        names.join(",")
    }
}

fn summary_table(
    names: &[String],
    data: &Dataset,
    baseline: &MixtureFit,
    mixture: Option<&MixtureFit>,
    reports: &[(String, DeficiencyReport)],
    sensors: bool,
) -> String {
    let mut header = vec!["model".to_string()];
    if sensors {
        header.push("sensors".to_string());
    }
    header.push("weight".to_string());
    header.extend(names.iter().cloned());
    header.extend(["discrepancy".to_string(), "KS D".to_string(), "n".to_string()]);

    let report_of = |label: &str| reports.iter().find(|(l, _)| l == label).map(|(_, r)| r);
    let mut rows: Vec<Vec<String>> = Vec::new();
    let push = |rows: &mut Vec<Vec<String>>, label: &str, sens: String, weight: String, theta: Option<&[f64]>| {
        let mut row = vec![label.to_string()];
        if sensors {
            row.push(sens);
        }
        row.push(weight);
        match theta {
            Some(t) => row.extend(t.iter().map(|v| format!("{v:.2}"))),
            None => row.extend(names.iter().map(|_| String::new())),
        }
        match report_of(label) {
            Some(r) => row.extend([format!("{:.2}", r.discrepancy), format!("{:.2}", r.ks_statistic), r.n.to_string()]),
            None => row.extend(["-".to_string(), "-".to_string(), "0".to_string()]),
        }
        rows.push(row);
    };
    push(&mut rows, "baseline", "all".into(), String::new(), Some(&baseline.thetas[0]));
    if let Some(fit) = mixture {
        for j in 0..fit.k() {
            push(
                &mut rows,
                &format!("cluster {}", j + 1),
                cluster_sensors(fit, data, j),
                format!("{:.2}", fit.weights[j]),
                Some(&fit.thetas[j]),
            );
        }
        push(&mut rows, "mixture", "all".into(), String::new(), None);
    }

    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let _ = writeln!(out, "{}", line(&header));
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    for r in &rows {
        let _ = writeln!(out, "{}", line(r));
    }
    out
}

/// Outputs of a diagnose run.
#[derive(Clone, Debug)]
pub struct DiagnoseOutcome {
    pub cluster: usize,
    pub daily: Vec<CorrelationEntry>,
    pub steps: Vec<CorrelationEntry>,
}

/// Correlates the cluster assignments of a previous `fit` with the weather
/// of its evaluation window.
pub fn cmd_diagnose(config: &ExperimentConfig) -> Result<DiagnoseOutcome> {
    let out = &config.out_dir;
    let need = |name: &str| -> Result<PathBuf> {
        let p = out.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("missing fit artifact {}; run `fit` first", p.display()),
            )))
        }
    };
    let weather_path = match &config.weather_path {
        Some(p) => p.clone(),
        None => need("weather.csv")?,
    };
    let weather = WeatherSeries::load(&weather_path)?;
    let data = Dataset::load(&need("data.csv")?)?;
    let (labels, resp) = read_responsibilities_csv(fs::File::open(need("responsibilities.csv")?)?)?;
    if labels.len() != data.len()
        || labels
            .iter()
            .zip(data.inputs())
            .any(|(&(s, t), x)| s != x.sensor_id || t != x.time_index)
    {
        return Err(Error::invalid("responsibilities do not match data.csv"));
    }
    let weights = read_weights(&need("mixture_params.csv")?)?;
    let cluster = match config.diagnose.cluster {
        Some(c) if c >= 1 && c <= weights.len() => c - 1,
        Some(c) => return Err(Error::invalid(format!("cluster {c} out of range 1..={}", weights.len()))),
        None => (0..weights.len()).fold(0, |b, j| if weights[j] > weights[b] { j } else { b }),
    };
    let n_steps = data.inputs().iter().map(|x| x.time_index + 1).max().unwrap_or(0);
    if weather.len() < n_steps {
        return Err(Error::invalid("weather is shorter than the data window"));
    }
    let window = weather.window(weather.len() - n_steps, n_steps)?;

    let daily = correlation_report_for(
        &resp,
        cluster,
        &data,
        &window,
        &config.diagnose.lags_days,
        Cadence::Daily { steps_per_day: STEPS_PER_DAY },
    )?;
    let steps = correlation_report_for(&resp, cluster, &data, &window, &config.diagnose.lags_steps, Cadence::Step)?;
    write_correlation_csv(fs::File::create(out.join("correlation_daily.csv"))?, &daily)?;
    write_correlation_csv(fs::File::create(out.join("correlation_4h.csv"))?, &steps)?;

    let (names, matrix) = weather_correlation_matrix(&window)?;
    let mut w = csv::Writer::from_path(out.join("weather_correlation.csv"))?;
    let mut header = vec!["covariate".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in names.iter().zip(&matrix) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|c| c.map_or("NA".to_string(), |v| v.to_string())));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut text = String::new();
    for s in assignment_series(&resp, &data, cluster, n_steps)? {
        if let Some((cov, lag, c)) = strongest_covariate(&daily, &s.sensor) {
            let _ = writeln!(text, "{}: strongest daily covariate {cov} (lag {lag} steps, corr {c:.3})", s.sensor);
        }
    }
    fs::write(out.join("diagnose.txt"), &text)?;

    if config.svg {
        fs::write(out.join("correlation_daily.svg"), correlation_heatmap_svg(&daily))?;
        fs::write(out.join("correlation_4h.svg"), correlation_heatmap_svg(&steps))?;
        let series = assignment_series(&resp, &data, cluster, n_steps)?;
        fs::write(out.join("assignment_daily.svg"), assignment_svg(&series, STEPS_PER_DAY)?)?;
    }
    Ok(DiagnoseOutcome { cluster, daily, steps })
}

fn read_weights(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut weights = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let w = rec
            .get(1)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::invalid("bad weight in mixture_params.csv"))?;
        weights.push(w);
    }
    if weights.is_empty() {
        return Err(Error::invalid("mixture_params.csv has no clusters"));
    }
    Ok(weights)
}

/// Forward run of the thermal model with `thermal.truth`; writes
/// `sensors.csv` (`time_index,bottom,top,south,north`) and the weather used.
pub fn cmd_simulate(config: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    fs::create_dir_all(&config.out_dir)?;
    let scene = ThermalScene::build(config.thermal.scene.clone(), config.thermal.constants.clone())?;
    let weather = load_weather(config)?;
    let series = scene.simulate(&config.thermal.truth, &weather)?;
    weather.save(&config.out_dir.join("weather.csv"))?;
    let mut w = csv::Writer::from_path(config.out_dir.join("sensors.csv"))?;
    let mut header = vec!["time_index".to_string()];
    header.extend(scene.mesh.probes.iter().map(|p| p.name.to_string()));
    w.write_record(&header)?;
    for t in 0..series.n_steps() {
        let mut rec = vec![t.to_string()];
        rec.extend(series.values.iter().map(|s| s[t].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(series.values)
}

/// Recomputes deficiency reports from a residual CSV
/// (`model,reading_index,residual`, normalized residuals), one per model label.
pub fn cmd_report(config: &ExperimentConfig) -> Result<Vec<(String, DeficiencyReport)>> {
    let path = config
        .residuals_path
        .clone()
        .unwrap_or_else(|| config.out_dir.join("residuals.csv"));
    let mut r = csv::Reader::from_path(&path)?;
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::invalid(format!("residual CSV lacks column {name}")))
    };
    let (mc, rc) = (col("model")?, col("residual")?);
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let model = rec.get(mc).unwrap_or("").trim().to_string();
        let v: f64 = rec
            .get(rc)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::invalid(format!("row {}: bad residual", line + 1)))?;
        match groups.iter_mut().find(|(m, _)| *m == model) {
            Some((_, vals)) => vals.push(v),
            None => groups.push((model, vec![v])),
        }
    }
    if groups.is_empty() {
        return Err(Error::invalid("residual CSV has no rows"));
    }
    let reports = groups
        .into_iter()
        .map(|(m, v)| Ok((m, DeficiencyReport::from_residuals(&v, ALPHA)?)))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&config.out_dir)?;
    write_report_csv(fs::File::create(config.out_dir.join("report.csv"))?, &reports)?;
    Ok(reports)
}
