//! One function per subcommand. Each returns the process exit code on
//! success paths that still carry a status (undefined metrics).

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use pa_core::synth::{generate_synthetic_dataset, SynthSpec};
use pa_core::{Dataset, EngineConfig};

use crate::cache::BankCache;
use crate::config::PipelineConfig;
use crate::container::{load_container, write_container, write_file};
use crate::engine;
use crate::error::{Error, Result, EXIT_METRIC_UNDEFINED, EXIT_OK};
use crate::output::{self, Staged};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub bank_cache: Option<PathBuf>,
}

impl Options {
    /// Runs `f` on a worker pool bounded by `--jobs`.
    pub fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.jobs {
            if n == 0 {
                return Err(Error::Config("--jobs must be at least 1".into()));
            }
            builder = builder.num_threads(n);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(f))
    }

    fn cache(&self) -> Option<BankCache> {
        self.bank_cache.as_ref().map(BankCache::new)
    }
}

/// Validated engine config and dataset for a pipeline subcommand.
pub struct Prepared {
    pub config: PipelineConfig,
    pub engine: EngineConfig,
    pub dataset: Dataset,
}

pub fn prepare(config: &PipelineConfig, opts: &Options) -> Result<Prepared> {
    let mut config = config.clone();
    if let Some(seed) = opts.seed {
        config.memory.seed = seed;
    }
    let engine = config.engine()?;
    config.check_paths()?;
    let dataset = load_container(&config.container).map_err(Error::stage("load container"))?;
    info!(
        "loaded `{}`: {} images, grid {:?}, {} channels, layers {:?}",
        dataset.manifest.category,
        dataset.len(),
        dataset.manifest.grid_dims,
        dataset.manifest.channels,
        dataset.manifest.layers
    );
    Ok(Prepared {
        config,
        engine,
        dataset,
    })
}

/// Checks a container and returns a one-line summary.
pub fn extract_validate(container: &Path) -> Result<String> {
    let ds = load_container(container).map_err(Error::stage("validate container"))?;
    let masks = ds.masks.iter().filter(|m| m.is_some()).count();
    Ok(format!(
        "{}: `{}`, {} images, grid {}x{}, {} channels, layers {:?}, {} masks: ok",
        container.display(),
        ds.manifest.category,
        ds.len(),
        ds.manifest.rows(),
        ds.manifest.cols(),
        ds.manifest.channels,
        ds.manifest.layers,
        masks
    ))
}

pub fn select(config: &PipelineConfig, opts: &Options) -> Result<i32> {
    let p = prepare(config, opts)?;
    let sel = opts.in_pool(|| engine::select(&p.dataset, &p.engine))??;
    let path = p.config.output.join(output::SELECTION_FILE);
    write_file(&path, output::selection_json(&sel).as_bytes())?;
    Ok(EXIT_OK)
}

pub fn build_banks(config: &PipelineConfig, opts: &Options) -> Result<i32> {
    if opts.bank_cache.is_none() {
        return Err(Error::Config("build-banks needs --bank-cache DIR".into()));
    }
    let p = prepare(config, opts)?;
    let cache = opts.cache();
    opts.in_pool(|| {
        let sel = engine::select(&p.dataset, &p.engine)?;
        engine::build_banks(&p.dataset, &p.engine, &sel, cache.as_ref()).map(|_| ())
    })??;
    Ok(EXIT_OK)
}

/// Selection, banks and scoring; writes maps, the score table and the
/// selection summary into a fresh output directory.
pub fn score(config: &PipelineConfig, opts: &Options) -> Result<i32> {
    let p = prepare(config, opts)?;
    let staged = Staged::new(&p.config.output, &[])?;
    opts.in_pool(|| score_into(&p, opts, staged.path()))??;
    staged.commit()?;
    Ok(EXIT_OK)
}

fn score_into(p: &Prepared, opts: &Options, dir: &Path) -> Result<pa_core::MetricSet> {
    let cache = opts.cache();
    let sel = engine::select(&p.dataset, &p.engine)?;
    write_file(
        &dir.join(output::SELECTION_FILE),
        output::selection_json(&sel).as_bytes(),
    )?;
    let banks = engine::build_banks(&p.dataset, &p.engine, &sel, cache.as_ref())?;
    let outcome = engine::score(&p.dataset, &banks, &p.engine)?;
    let maps = engine::render(&p.dataset, &outcome, &p.engine)?;
    let scales = output::write_maps(dir, &p.dataset, &maps)?;
    output::write_scores(dir, &p.dataset, &outcome, &scales)?;
    info!("scored {} images", p.dataset.len());
    engine::evaluate(&p.dataset, &outcome, &maps, &p.engine)
}

/// Metrics from the maps and score table of an earlier `score` run.
pub fn evaluate(config: &PipelineConfig, opts: &Options) -> Result<i32> {
    let p = prepare(config, opts)?;
    let dir = &p.config.output;
    let image_scores = output::read_scores(dir, &p.dataset)?;
    let maps = output::read_maps(dir, &p.dataset)?;
    let outcome = pa_core::pipeline::ScoreOutcome {
        maps: Vec::new(),
        image_scores,
    };
    let metrics = opts.in_pool(|| engine::evaluate(&p.dataset, &outcome, &maps, &p.engine))??;
    let tmp = dir.join(format!("{}.partial", output::REPORT_FILE));
    write_file(
        &tmp,
        output::report_json(&p.dataset, &p.engine, &metrics).as_bytes(),
    )?;
    let dst = dir.join(output::REPORT_FILE);
    fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))?;
    Ok(metrics_status(&metrics))
}

/// End-to-end run into a fresh output directory.
pub fn run(config: &PipelineConfig, opts: &Options) -> Result<i32> {
    let p = prepare(config, opts)?;
    let staged = Staged::new(&p.config.output, &[])?;
    let metrics = opts.in_pool(|| score_into(&p, opts, staged.path()))??;
    write_file(
        &staged.path().join(output::REPORT_FILE),
        output::report_json(&p.dataset, &p.engine, &metrics).as_bytes(),
    )?;
    staged.commit()?;
    Ok(metrics_status(&metrics))
}

fn metrics_status(metrics: &pa_core::MetricSet) -> i32 {
    if metrics.all_defined() {
        EXIT_OK
    } else {
        log::warn!("some metrics are undefined for this dataset; reported as n/a");
        EXIT_METRIC_UNDEFINED
    }
}

/// Reads a synthetic spec from TOML, or JSON when the file ends in `.json`.
pub fn read_synth_spec(path: &Path) -> Result<SynthSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Generates a synthetic container into `out`.
pub fn synth(spec: &SynthSpec, out: &Path) -> Result<i32> {
    spec.validate().map_err(Error::stage("synth"))?;
    let generated = generate_synthetic_dataset(spec).map_err(Error::stage("synth"))?;
    let staged = Staged::new(out, &[])?;
    write_container(&generated.dataset, staged.path())?;
    staged.commit()?;
    info!(
        "wrote {} synthetic images to {}",
        spec.images,
        out.display()
    );
    Ok(EXIT_OK)
}
