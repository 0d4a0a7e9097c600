//! End-to-end commands: fixture synthesis, extraction, clustering with
//! evaluation, k sweeps, cluster profiles and scatter plots.
//!
//! Every command reads a [`RunConfig`] and writes into `config.out_dir`.
//! Randomness flows from `config.seed` through [`stage_seed`], so rerunning
//! one stage reproduces its outputs byte for byte.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio_io::{self, AudioClip, CANONICAL_RATE};
use crate::clustering::{self, ClusterModel, Clusterer, KSweepResult, Method};
use crate::dsp_features;
use crate::error::{Error, Result};
use crate::feature_table::{self, FeatureMatrix, TrackRecord};
use crate::metrics::{self, EvaluationReport, ProfileMapping};
use crate::preprocess_select::{self, LabelVector};
use crate::schema::FeatureGroup;
use crate::stats::{mean, mix_seed, std};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const SELECTION_FILE: &str = "selection.csv";
pub const SELECTED_FILE: &str = "selected_features.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const PROFILES_FILE: &str = "profiles.csv";
pub const SCATTER_FILE: &str = "scatter.svg";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    Kmeans,
    Divisive,
    Both,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Kmeans => vec![Method::Kmeans],
            MethodChoice::Divisive => vec![Method::Divisive],
            MethodChoice::Both => vec![Method::Kmeans, Method::Divisive],
        }
    }
}

impl std::str::FromStr for MethodChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kmeans" => Ok(MethodChoice::Kmeans),
            "divisive" => Ok(MethodChoice::Divisive),
            "both" => Ok(MethodChoice::Both),
            other => Err(Error::Config(format!("unknown method `{other}` (kmeans|divisive|both)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub k_fixed: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub top_k: usize,
    pub method: MethodChoice,
    pub embeddings: Option<PathBuf>,
    /// Extraction pool size; `None` uses every logical core.
    pub workers: Option<usize>,
    pub bootstrap: usize,
    pub labels: Option<PathBuf>,
    pub mapping: Option<PathBuf>,
    pub per_genre: usize,
    pub duration_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            k_fixed: 35,
            k_min: 15,
            k_max: 40,
            restarts: clustering::DEFAULT_RESTARTS,
            top_k: preprocess_select::DEFAULT_TOP_K,
            method: MethodChoice::Kmeans,
            embeddings: None,
            workers: None,
            bootstrap: metrics::DEFAULT_BOOTSTRAP,
            labels: None,
            mapping: None,
            per_genre: 10,
            duration_s: 12.0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{value}`")))
}

impl RunConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "manifest" => self.manifest = Some(PathBuf::from(v)),
            "out" | "out_dir" => self.out_dir = PathBuf::from(v),
            "seed" => self.seed = parse_num(key, v)?,
            "k" | "k_fixed" => self.k_fixed = parse_num(key, v)?,
            "k_min" => self.k_min = parse_num(key, v)?,
            "k_max" => self.k_max = parse_num(key, v)?,
            "restarts" => self.restarts = parse_num(key, v)?,
            "top_k" => self.top_k = parse_num(key, v)?,
            "method" => self.method = v.parse()?,
            "embeddings" => self.embeddings = Some(PathBuf::from(v)),
            "workers" => self.workers = Some(parse_num(key, v)?),
            "bootstrap" => self.bootstrap = parse_num(key, v)?,
            "labels" => self.labels = Some(PathBuf::from(v)),
            "mapping" => self.mapping = Some(PathBuf::from(v)),
            "per_genre" => self.per_genre = parse_num(key, v)?,
            "duration" | "duration_s" => self.duration_s = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Flat `key=value` lines; blank lines and `#` comments are ignored.
    /// Relative paths are taken relative to the config file.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key=value", path.display(), no + 1)))?;
            self.set(k, v)?;
            let key = k.trim();
            if matches!(key, "manifest" | "out" | "out_dir" | "embeddings" | "labels" | "mapping") {
                self.rebase(key, base);
            }
        }
        Ok(())
    }

    fn rebase(&mut self, key: &str, base: &Path) {
        let slot = match key {
            "manifest" => self.manifest.as_mut(),
            "embeddings" => self.embeddings.as_mut(),
            "labels" => self.labels.as_mut(),
            "mapping" => self.mapping.as_mut(),
            _ => Some(&mut self.out_dir),
        };
        if let Some(p) = slot {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_fixed < 2 {
            return Err(Error::Config("k must be at least 2".into()));
        }
        if self.k_min < 2 || self.k_max <= self.k_min {
            return Err(Error::Config(format!(
                "k range [{}, {}] must satisfy 2 <= k_min < k_max",
                self.k_min, self.k_max
            )));
        }
        if self.restarts == 0 || self.top_k == 0 || self.per_genre == 0 {
            return Err(Error::Config("restarts, top_k and per_genre must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        if !(self.duration_s >= 1.0) {
            return Err(Error::Config("fixture duration must be at least 1 s".into()));
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.manifest
            .clone()
            .unwrap_or_else(|| self.out_dir.join(MANIFEST_FILE))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Per-stage seed: the root seed mixed with an FNV-1a hash of the stage name.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let hash = stage.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    });
    mix_seed(root, hash)
}

/// Whether a command finished cleanly or skipped some inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 1,
        }
    }
}

pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 3,
    }
}

// ---------------------------------------------------------------- fixtures

/// Synthetic genre family rendered by [`render_fixture`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    /// Four-on-the-floor kick, offbeat open hats, minor chord pad.
    House,
    /// Kick, sixteenth closed hats, low rumble.
    Techno,
    /// Kick, beat-gated bright saw chord.
    Trance,
    /// Kick on every beat, snare on the backbeat, detuned saw bass.
    DrumAndBass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureGenre {
    pub name: String,
    pub bpm: f64,
    pub recipe: Recipe,
    pub key: Option<String>,
}

pub fn default_fixture_genres() -> Vec<FixtureGenre> {
    let g = |name: &str, bpm, recipe, key: Option<&str>| FixtureGenre {
        name: name.into(),
        bpm,
        recipe,
        key: key.map(str::to_string),
    };
    vec![
        g("house", 120.0, Recipe::House, Some("Am")),
        g("techno", 128.0, Recipe::Techno, None),
        g("trance", 140.0, Recipe::Trance, Some("F#m")),
        g("drum_and_bass", 174.0, Recipe::DrumAndBass, Some("Em")),
    ]
}

fn add_kick(buf: &mut [f64], at: f64, rate: f64, gain: f64) {
    let start = (at * rate) as usize;
    let len = (0.25 * rate) as usize;
    let mut phase = 0.0;
    for i in 0..len.min(buf.len().saturating_sub(start)) {
        let t = i as f64 / rate;
        let freq = 50.0 + 100.0 * (-t * 30.0).exp();
        phase += 2.0 * PI * freq / rate;
        buf[start + i] += gain * (-t * 12.0).exp() * phase.sin();
    }
}

fn add_noise_burst(buf: &mut [f64], at: f64, len_s: f64, decay: f64, rate: f64, gain: f64, rng: &mut ChaCha8Rng) {
    let start = (at * rate) as usize;
    let len = (len_s * rate) as usize;
    let mut prev = 0.0;
    for i in 0..len.min(buf.len().saturating_sub(start)) {
        let t = i as f64 / rate;
        let n: f64 = rng.gen_range(-1.0..1.0);
        // first difference tilts the noise towards high frequencies
        buf[start + i] += gain * (-t * decay).exp() * (n - prev);
        prev = n;
    }
}

fn saw(phase: f64) -> f64 {
    2.0 * (phase - phase.floor()) - 1.0
}

/// Renders one deterministic fixture track.
pub fn render_fixture(genre: &FixtureGenre, duration_s: f64, rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let r = rate as f64;
    let n = (duration_s * r).round() as usize;
    let mut buf = vec![0.0; n];
    let beat = 60.0 / genre.bpm;
    let n_beats = (duration_s / beat).ceil() as usize;
    let gain: f64 = rng.gen_range(0.75..1.0);
    let detune: f64 = rng.gen_range(0.98..1.02);
    let floor: f64 = rng.gen_range(0.002..0.008);
    let tone = |buf: &mut [f64], freqs: &[f64], amp: f64, shape: fn(f64) -> f64, gate: Option<f64>| {
        for (i, s) in buf.iter_mut().enumerate() {
            let t = i as f64 / r;
            let env = match gate {
                Some(step) => {
                    let pos = (t / step).fract();
                    if pos < 0.6 { 1.0 } else { 0.0 }
                }
                None => 1.0,
            };
            let v: f64 = freqs.iter().map(|f| shape(f * detune * t)).sum();
            *s += amp * env * v / freqs.len() as f64;
        }
    };
    match genre.recipe {
        Recipe::House => {
            for b in 0..n_beats {
                let t = b as f64 * beat;
                add_kick(&mut buf, t, r, gain);
                add_noise_burst(&mut buf, t + beat / 2.0, 0.08, 40.0, r, 0.08, rng);
            }
            tone(&mut buf, &[220.0, 261.63, 329.63], 0.2, |p| (2.0 * PI * p).sin(), None);
        }
        Recipe::Techno => {
            for b in 0..n_beats {
                let t = b as f64 * beat;
                add_kick(&mut buf, t, r, gain);
                for s in 1..4 {
                    add_noise_burst(&mut buf, t + s as f64 * beat / 4.0, 0.02, 150.0, r, 0.03, rng);
                }
            }
            tone(&mut buf, &[45.0], 0.2, |p| (2.0 * PI * p).sin(), None);
        }
        Recipe::Trance => {
            for b in 0..n_beats {
                add_kick(&mut buf, b as f64 * beat, r, gain);
            }
            tone(&mut buf, &[369.99, 440.0, 554.37, 739.99], 0.2, saw, Some(beat));
        }
        Recipe::DrumAndBass => {
            for b in 0..n_beats {
                let t = b as f64 * beat;
                add_kick(&mut buf, t, r, gain);
                if b % 2 == 1 {
                    add_noise_burst(&mut buf, t, 0.12, 20.0, r, 0.1 * gain, rng);
                }
            }
            tone(&mut buf, &[41.2, 41.2 * 1.01], 0.3, saw, None);
        }
    }
    for s in buf.iter_mut() {
        *s += floor * rng.gen_range(-1.0..1.0);
    }
    let peak = buf.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        buf.iter_mut().for_each(|s| *s *= 0.9 / peak);
    }
    buf
}

/// Writes `per_genre` WAVs for each genre under `out/audio` plus a manifest.
pub fn cmd_fixtures(config: &RunConfig, genres: &[FixtureGenre]) -> Result<Vec<TrackRecord>> {
    config.validate()?;
    let audio_dir = config.out("audio");
    fs::create_dir_all(&audio_dir)?;
    let seed = stage_seed(config.seed, "fixtures");
    let mut records = Vec::new();
    for (g, genre) in genres.iter().enumerate() {
        for i in 0..config.per_genre {
            let id = format!("{}_{:02}", genre.name, i);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, (g * 10_000 + i) as u64));
            let samples = render_fixture(genre, config.duration_s, CANONICAL_RATE, &mut rng);
            let clip = AudioClip::new(samples, CANONICAL_RATE, id.clone())?;
            let rel = PathBuf::from("audio").join(format!("{id}.wav"));
            audio_io::write_wav(config.out_dir.join(&rel), &clip)?;
            records.push(TrackRecord {
                track_id: id,
                path: rel,
                genre: genre.name.clone(),
                bpm: Some(genre.bpm),
                key: genre.key.clone(),
                length_s: Some(config.duration_s),
            });
        }
    }
    feature_table::save_manifest(config.out(MANIFEST_FILE), &records)?;
    info!("wrote {} fixture tracks", records.len());
    Ok(records)
}

// -------------------------------------------------------------- extraction

/// Decodes one track, resamples to the canonical rate and extracts the full
/// feature vector.
pub fn extract_track(record: &TrackRecord) -> Result<crate::schema::FeatureVector> {
    let clip = audio_io::load_wav(&record.path)?;
    let clip = if clip.sample_rate == CANONICAL_RATE {
        clip
    } else {
        audio_io::resample(&clip, CANONICAL_RATE)?
    };
    dsp_features::track_feature_vector(&clip)
}

fn pool(config: &RunConfig) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        b = b.num_threads(w);
    }
    b.build().map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

/// Extracts every manifest track into `features.csv`. Failed tracks are
/// logged and omitted; the outcome is `Partial` if any failed.
pub fn cmd_extract(config: &RunConfig) -> Result<(FeatureMatrix, Outcome)> {
    config.validate()?;
    let records = feature_table::load_manifest(config.manifest_path()).map_err(|e| e.in_stage("manifest"))?;
    let results: Vec<Result<_>> = pool(config)?.install(|| records.par_iter().map(extract_track).collect());
    let mut ok_records = Vec::new();
    let mut vectors = HashMap::new();
    let mut failed = Vec::new();
    for (rec, res) in records.iter().zip(results) {
        match res {
            Ok(v) => {
                vectors.insert(rec.track_id.clone(), v);
                ok_records.push(rec.clone());
            }
            Err(e) => {
                warn!("track `{}` failed: {e}", rec.track_id);
                failed.push(rec.track_id.clone());
            }
        }
    }
    if ok_records.is_empty() {
        return Err(Error::InvalidInput("every track failed extraction".into()).in_stage("extract"));
    }
    if !failed.is_empty() {
        warn!("{} track(s) omitted: {}", failed.len(), failed.join(", "));
    }
    let m = feature_table::assemble_matrix(&ok_records, &vectors).map_err(|e| e.in_stage("extract"))?;
    fs::create_dir_all(&config.out_dir)?;
    feature_table::save_matrix(&m, config.out(FEATURES_FILE))?;
    let outcome = if failed.is_empty() { Outcome::Success } else { Outcome::Partial };
    Ok((m, outcome))
}

// -------------------------------------------------------------- clustering

/// Matrix ready for clustering plus the genre labels aligned to its rows.
pub struct Prepared {
    pub matrix: FeatureMatrix,
    pub truth: LabelVector,
    pub selection_applied: bool,
}

fn genre_labels(config: &RunConfig, rows: &[String]) -> Result<LabelVector> {
    let records = feature_table::load_manifest(config.manifest_path())?;
    let by_id: HashMap<&str, &str> = records
        .iter()
        .map(|r| (r.track_id.as_str(), r.genre.as_str()))
        .collect();
    let names = rows
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|g| g.to_string())
                .ok_or_else(|| Error::MissingTrack(id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelVector::from_names(&names))
}

fn load_features(config: &RunConfig) -> Result<FeatureMatrix> {
    let path = config.out(FEATURES_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    feature_table::load_matrix(path)
}

/// Loads the extracted matrix (or imported embeddings) and, for extracted
/// features, runs engineering, normalization and selection. Catalog
/// metadata columns never enter clustering.
pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    if let Some(emb) = &config.embeddings {
        let records = feature_table::load_manifest(config.manifest_path()).map_err(|e| e.in_stage("manifest"))?;
        let (m, _) = feature_table::import_embeddings(emb, &records).map_err(|e| e.in_stage("embeddings"))?;
        info!("selection skipped for imported embeddings");
        let truth = genre_labels(config, &m.rows)?;
        return Ok(Prepared {
            matrix: m,
            truth,
            selection_applied: false,
        });
    }
    let raw = load_features(config).map_err(|e| e.in_stage("load"))?;
    let truth = genre_labels(config, &raw.rows).map_err(|e| e.in_stage("labels"))?;
    let acoustic: Vec<usize> = (0..raw.n_cols()).filter(|&j| raw.groups[j] != FeatureGroup::Meta).collect();
    let m = raw.select_columns(&acoustic);
    let m = preprocess_select::engineer_features(&m).map_err(|e| e.in_stage("engineer"))?;
    let m = preprocess_select::ensemble_normalize(&m).map_err(|e| e.in_stage("normalize"))?;
    let top_k = config.top_k.min(m.n_cols());
    let (sel, report) = preprocess_select::ensemble_select(&m, &truth, top_k, stage_seed(config.seed, "select"))
        .map_err(|e| e.in_stage("select"))?;
    fs::create_dir_all(&config.out_dir)?;
    report.save(config.out(SELECTION_FILE))?;
    feature_table::save_matrix(&sel, config.out(SELECTED_FILE))?;
    Ok(Prepared {
        matrix: sel,
        truth,
        selection_applied: true,
    })
}

fn clusterer_for(method: Method, config: &RunConfig) -> Clusterer {
    match method {
        Method::Kmeans => Clusterer::KMeans {
            k: config.k_fixed,
            restarts: config.restarts,
        },
        Method::Divisive => Clusterer::Divisive { k: config.k_fixed },
    }
}

pub fn labels_file(method: Method) -> String {
    format!("labels_{}.csv", method.as_str())
}

pub fn model_file(method: Method) -> String {
    format!("model_{}.json", method.as_str())
}

pub fn report_file(method: Method) -> String {
    format!("report_{}.json", method.as_str())
}

/// Clusters at `k_fixed` with each requested method and writes labels, the
/// model sidecar and the evaluation report per method.
pub fn cmd_cluster(config: &RunConfig) -> Result<Vec<(ClusterModel, EvaluationReport)>> {
    config.validate()?;
    let prep = prepare(config)?;
    let rows = &prep.matrix.data;
    if config.k_fixed > rows.len() {
        return Err(Error::Config(format!("k = {} exceeds {} tracks", config.k_fixed, rows.len())));
    }
    let seed = stage_seed(config.seed, "cluster");
    let mut out = Vec::new();
    for method in config.method.methods() {
        let c = clusterer_for(method, config);
        let model = c.fit(rows, seed).map_err(|e| e.in_stage("cluster"))?;
        let mut report = metrics::evaluate_all(rows, &model, &prep.truth.labels, &c, stage_seed(config.seed, "evaluate"), config.bootstrap)
            .map_err(|e| e.in_stage("evaluate"))?;
        report.context.selection = if prep.selection_applied { "applied" } else { "skipped" }.into();
        feature_table::save_labels(config.out(&labels_file(method)), &prep.matrix.rows, &model.labels)?;
        fs::write(config.out(&model_file(method)), serde_json::to_string_pretty(&model.sidecar())?)?;
        fs::write(config.out(&report_file(method)), report.to_json()?)?;
        out.push((model, report));
    }
    Ok(out)
}

pub fn save_sweep(path: impl AsRef<Path>, s: &KSweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "k",
        "silhouette",
        "calinski_harabasz",
        "inertia",
        "elbow",
        "silhouette_norm",
        "calinski_harabasz_norm",
        "elbow_norm",
        "consensus",
        "chosen",
    ])?;
    for i in 0..s.ks.len() {
        w.write_record([
            s.ks[i].to_string(),
            s.silhouette[i].to_string(),
            s.calinski_harabasz[i].to_string(),
            s.inertia[i].to_string(),
            s.elbow[i].to_string(),
            s.norm_silhouette[i].to_string(),
            s.norm_calinski_harabasz[i].to_string(),
            s.norm_elbow[i].to_string(),
            s.consensus[i].to_string(),
            (s.ks[i] == s.chosen_k).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sweeps `k_min..=k_max` on a prepared matrix.
pub fn sweep_matrix(config: &RunConfig, rows: &[Vec<f64>]) -> Result<KSweepResult> {
    if config.k_max > rows.len() {
        return Err(Error::Config(format!("k_max = {} exceeds {} rows", config.k_max, rows.len())));
    }
    clustering::select_natural_k(rows, config.k_min, config.k_max, config.restarts, stage_seed(config.seed, "sweep"))
        .map_err(|e| e.in_stage("sweep"))
}

pub fn cmd_sweep(config: &RunConfig) -> Result<KSweepResult> {
    config.validate()?;
    let prep = prepare(config)?;
    let s = sweep_matrix(config, &prep.matrix.data)?;
    save_sweep(config.out(SWEEP_FILE), &s)?;
    Ok(s)
}

// ---------------------------------------------------------------- profiles

fn resolve_labels(config: &RunConfig, rows: &[String]) -> Result<Vec<usize>> {
    let path = config.labels.clone().unwrap_or_else(|| {
        let method = config.method.methods()[0];
        config.out(&labels_file(method))
    });
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    feature_table::load_labels(path, rows)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Radar chart of one profile: six axes, polygon at the percentile values.
pub fn radar_svg(p: &metrics::ClusterProfile) -> String {
    let (cx, cy, radius) = (200.0, 200.0, 140.0);
    let angle = |i: usize| -PI / 2.0 + 2.0 * PI * i as f64 / 6.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="400" height="420" viewBox="0 0 400 420">"#
    );
    let _ = writeln!(s, r#"<rect width="400" height="420" fill="white"/>"#);
    for ring in [0.25, 0.5, 0.75, 1.0] {
        let pts: Vec<String> = (0..6)
            .map(|i| {
                let a = angle(i);
                format!("{:.2},{:.2}", cx + ring * radius * a.cos(), cy + ring * radius * a.sin())
            })
            .collect();
        let _ = writeln!(s, r##"<polygon points="{}" fill="none" stroke="#cccccc"/>"##, pts.join(" "));
    }
    for (i, dim) in metrics::Dimension::ALL.iter().enumerate() {
        let a = angle(i);
        let (x, y) = (cx + radius * a.cos(), cy + radius * a.sin());
        let _ = writeln!(s, r##"<line x1="{cx}" y1="{cy}" x2="{x:.2}" y2="{y:.2}" stroke="#999999"/>"##);
        let label = match p.percentiles[i] {
            Some(v) => format!("{} {:.0}", dim.as_str(), v),
            None => format!("{} n/a", dim.as_str()),
        };
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            cx + (radius + 22.0) * a.cos(),
            cy + (radius + 22.0) * a.sin(),
            label
        );
    }
    let pts: Vec<String> = (0..6)
        .map(|i| {
            let v = p.percentiles[i].unwrap_or(0.0) / 100.0;
            let a = angle(i);
            format!("{:.2},{:.2}", cx + v * radius * a.cos(), cy + v * radius * a.sin())
        })
        .collect();
    let _ = writeln!(
        s,
        r##"<polygon points="{}" fill="#3366cc" fill-opacity="0.35" stroke="#3366cc" stroke-width="2"/>"##,
        pts.join(" ")
    );
    let _ = writeln!(
        s,
        r#"<text x="200" y="405" font-size="13" text-anchor="middle">cluster {} (n={}, {} {:.0}%)</text>"#,
        p.cluster,
        p.size,
        xml_escape(&p.majority_genre),
        100.0 * p.purity
    );
    s.push_str("</svg>\n");
    s
}

pub fn profile_svg_file(cluster: usize) -> String {
    format!("profile_cluster_{cluster:02}.svg")
}

/// Writes `profiles.csv` and one radar SVG per cluster.
pub fn cmd_profile(config: &RunConfig) -> Result<Vec<metrics::ClusterProfile>> {
    config.validate()?;
    let m = load_features(config).map_err(|e| e.in_stage("load"))?;
    let labels = resolve_labels(config, &m.rows).map_err(|e| e.in_stage("labels"))?;
    let truth = genre_labels(config, &m.rows).map_err(|e| e.in_stage("labels"))?;
    let genres: Vec<String> = truth.labels.iter().map(|&l| truth.class_names[l].clone()).collect();
    let mapping = match &config.mapping {
        Some(p) => ProfileMapping::load(p)?,
        None => ProfileMapping::default(),
    };
    let profiles = metrics::cluster_profiles(&m, &labels, &genres, &mapping).map_err(|e| e.in_stage("profile"))?;
    metrics::save_profiles(config.out(PROFILES_FILE), &profiles)?;
    for p in &profiles {
        fs::write(config.out(&profile_svg_file(p.cluster)), radar_svg(p))?;
    }
    Ok(profiles)
}

// -------------------------------------------------------------------- plot

/// Projection onto the top two principal components of the standardized
/// data, with the variance along each.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<(Vec<[f64; 2]>, [f64; 2])> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if d < 2 {
        return Err(Error::InvalidInput(format!("PCA needs at least 2 columns, got {d}")));
    }
    if n < 2 {
        return Err(Error::InvalidInput("PCA needs at least 2 rows".into()));
    }
    let mut x = DMatrix::<f64>::zeros(n, d);
    for j in 0..d {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let (mu, sd) = (mean(&col), std(&col));
        for i in 0..n {
            x[(i, j)] = if sd > 0.0 { (col[i] - mu) / sd } else { 0.0 };
        }
    }
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&c| {
            let v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            // fix the sign so the largest loading is positive
            let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if big < 0.0 {
                v.iter().map(|x| -x).collect()
            } else {
                v
            }
        })
        .collect();
    let pts: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let row = x.row(i);
            std::array::from_fn(|a| row.iter().zip(&axes[a]).map(|(p, q)| p * q).sum())
        })
        .collect();
    let var = [eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0)];
    Ok((pts, var))
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

pub fn scatter_svg(points: &[[f64; 2]], labels: &[usize], variance: [f64; 2]) -> String {
    let (w, h, pad, legend_w) = (600.0, 500.0, 40.0, 120.0);
    let xs = points.iter().map(|p| p[0]);
    let ys = points.iter().map(|p| p[1]);
    let (x0, x1) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = (ys.clone().fold(f64::INFINITY, f64::min), ys.fold(f64::NEG_INFINITY, f64::max));
    let sx = |x: f64| pad + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0).max(1e-12) * (h - 2.0 * pad);
    let mut clusters = labels.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    let color = |l: usize| PALETTE[clusters.binary_search(&l).unwrap_or(0) % PALETTE.len()];
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{h}" viewBox="0 0 {} {h}">"#,
        w + legend_w,
        w + legend_w
    );
    let _ = writeln!(s, r#"<rect width="{}" height="{h}" fill="white"/>"#, w + legend_w);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">PC1 (variance {:.3})</text>"#,
        w / 2.0,
        h - 10.0,
        variance[0]
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">PC2 (variance {:.3})</text>"#,
        h / 2.0,
        h / 2.0,
        variance[1]
    );
    for (p, &l) in points.iter().zip(labels) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}" fill-opacity="0.8"/>"#,
            sx(p[0]),
            sy(p[1]),
            color(l)
        );
    }
    for (i, &c) in clusters.iter().enumerate() {
        let y = pad + 18.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{:.2}" width="10" height="10" fill="{}"/>"#, w + 10.0, y, color(c));
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" font-size="12">cluster {c}</text>"#, w + 26.0, y + 9.0);
    }
    s.push_str("</svg>\n");
    s
}

/// PCA scatter of the clustering matrix coloured by cluster label.
pub fn cmd_plot(config: &RunConfig) -> Result<PathBuf> {
    config.validate()?;
    let selected = config.out(SELECTED_FILE);
    let m = if config.embeddings.is_none() && selected.exists() {
        feature_table::load_matrix(selected)?
    } else {
        prepare(config)?.matrix
    };
    let labels = resolve_labels(config, &m.rows).map_err(|e| e.in_stage("labels"))?;
    let (pts, var) = pca_2d(&m.data).map_err(|e| e.in_stage("plot"))?;
    let path = config.out(SCATTER_FILE);
    fs::write(&path, scatter_svg(&pts, &labels, var))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path) -> RunConfig {
        RunConfig {
            out_dir: dir.to_path_buf(),
            per_genre: 2,
            duration_s: 6.0,
            restarts: 3,
            bootstrap: 5,
            k_fixed: 4,
            k_min: 2,
            k_max: 5,
            top_k: 30,
            workers: Some(1),
            ..RunConfig::default()
        }
    }

    #[test]
    fn config_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "# comment\nseed = 9\nk=12\nmethod=both\nmanifest=data/m.csv\n\n").unwrap();
        let mut c = RunConfig::default();
        c.apply_file(&path).unwrap();
        assert_eq!((c.seed, c.k_fixed, c.method), (9, 12, MethodChoice::Both));
        assert_eq!(c.manifest, Some(dir.path().join("data/m.csv")));
        c.set("seed", "3").unwrap();
        assert_eq!(c.seed, 3);
        assert!(matches!(c.set("colour", "red"), Err(Error::Config(_))));
        assert!(matches!(c.set("k", "many"), Err(Error::Config(_))));
        fs::write(&path, "seed 9\n").unwrap();
        assert!(matches!(RunConfig::default().apply_file(&path), Err(Error::Config(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(error_exit_code(&Error::Config("x".into())), 2);
        assert_eq!(error_exit_code(&Error::Degenerate("x".into()).in_stage("cluster")), 3);
        assert_eq!(Outcome::Partial.exit_code(), 1);
    }

    #[test]
    fn stage_seeds_are_distinct() {
        assert_ne!(stage_seed(1, "cluster"), stage_seed(1, "sweep"));
        assert_eq!(stage_seed(1, "cluster"), stage_seed(1, "cluster"));
    }

    #[test]
    fn fixtures_are_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let genres = default_fixture_genres();
        let ra = cmd_fixtures(&config(a.path()), &genres).unwrap();
        cmd_fixtures(&config(b.path()), &genres).unwrap();
        assert_eq!(ra.len(), 8);
        for r in &ra {
            let fa = fs::read(a.path().join(&r.path)).unwrap();
            let fb = fs::read(b.path().join(&r.path)).unwrap();
            assert_eq!(fa, fb);
        }
        assert_eq!(
            fs::read(a.path().join(MANIFEST_FILE)).unwrap(),
            fs::read(b.path().join(MANIFEST_FILE)).unwrap()
        );
        let mut bpms: Vec<u64> = ra.iter().map(|r| r.bpm.unwrap() as u64).collect();
        bpms.dedup();
        assert_eq!(bpms, vec![120, 128, 140, 174]);
    }

    #[test]
    fn pca_orders_components_and_separates_blobs() {
        let (rows, truth) = crate::clustering::tests::blobs(&[vec![0.0, 0.0, 0.0], vec![30.0, 5.0, 0.0]], 50, 1.0, 3);
        let (pts, var) = pca_2d(&rows).unwrap();
        assert!(var[0] >= var[1]);
        let pc1 = |c: usize| -> Vec<f64> { pts.iter().zip(&truth).filter(|p| *p.1 == c).map(|p| p.0[0]).collect() };
        let (a, b) = (pc1(0), pc1(1));
        let within = std(&a).max(std(&b));
        assert!((mean(&a) - mean(&b)).abs() > 5.0 * within);
        assert!(pca_2d(&[vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn svgs_parse_as_xml() {
        let p = metrics::ClusterProfile {
            cluster: 0,
            size: 3,
            percentiles: vec![Some(100.0), None, Some(0.0), Some(50.0), Some(25.0), Some(75.0)],
            purity: 1.0,
            majority_genre: "r&b <live>".into(),
        };
        roxmltree::Document::parse(&radar_svg(&p)).unwrap();
        let svg = scatter_svg(&[[0.0, 1.0], [2.0, 3.0]], &[0, 1], [2.0, 1.0]);
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 2);
    }
}
