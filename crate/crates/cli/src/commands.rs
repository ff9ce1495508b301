//! Batch subcommands: run, map-build, query, bench.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use semmap::embedding::{ProviderConfig, SyntheticConfig};
use semmap::feature_map::{FeatureMap, HeatmapSpec, Hit, MapMeta, HEATMAP_EMPTY};
use semmap::mapper::{Mapper, MapperConfig};
use semmap::obslog::{replay, LogReader};
use semmap::sim::{run_bench, run_suite, BenchConfig, RunConfig};
use semmap::vocab::LabelVocabulary;

use crate::{CliResult, Failure, EXIT_BAD_MAP, EXIT_CONFIG};

pub fn run(config: &Path, out: &Path) -> CliResult {
    let cfg = RunConfig::load(config).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let base = config.parent();
    cfg.resolve_worlds(base, &LabelVocabulary::standard())
        .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let report = run_suite(&cfg, base, Some(out))?;
    let json = serde_json::to_string_pretty(&report).context("serializing report")?;
    let jp = out.join("report.json");
    std::fs::write(&jp, json).with_context(|| format!("writing {}", jp.display()))?;
    let table = report.table();
    let tp = out.join("report.txt");
    std::fs::write(&tp, &table).with_context(|| format!("writing {}", tp.display()))?;
    print!("{table}");
    Ok(())
}

fn read_provider(path: &Path) -> CliResult<ProviderConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing provider config {}", path.display()))
        .map_err(|e| Failure::new(EXIT_CONFIG, e))
}

pub fn map_build(log_dir: &Path, out: &Path, provider: Option<&Path>, scales: Option<Vec<i32>>) -> CliResult {
    let log = LogReader::open(log_dir).map_err(|e| Failure::new(EXIT_BAD_MAP, e))?;
    let pc = match provider {
        Some(p) => read_provider(p)?,
        None => log
            .settings
            .as_ref()
            .map(|s| s.provider.clone())
            .unwrap_or_else(|| ProviderConfig::Synthetic(SyntheticConfig::default())),
    };
    let scales = scales
        .or_else(|| log.settings.as_ref().map(|s| s.scales.clone()))
        .unwrap_or_else(|| MapperConfig::default().scales);
    let built = pc
        .build(&log.vocabulary)
        .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let mut mapper = Mapper::new(
        built.clone(),
        MapperConfig {
            scales: scales.clone(),
            ..Default::default()
        },
    )
    .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let frames = replay(&log, &mut mapper).map_err(|e| Failure::new(EXIT_BAD_MAP, e))?;
    let meta = MapMeta {
        provider: built.info(),
        provider_config: Some(pc),
        scales,
        vocabulary: Some(log.vocabulary.clone()),
        frames,
    };
    let map = mapper.into_map();
    map.save(out, Some(&meta))?;
    println!(
        "{}",
        serde_json::json!({"entries": map.len(), "dim": map.dim(), "frames": frames, "out": out})
    );
    Ok(())
}

pub struct QueryArgs {
    pub map: PathBuf,
    pub text: String,
    pub theta: f64,
    pub topk: usize,
    pub heatmap: Option<PathBuf>,
    pub cell: f64,
    pub provider: Option<PathBuf>,
}

#[derive(Serialize)]
struct QueryOutput<'a> {
    query: &'a str,
    theta: f64,
    entries: usize,
    above_threshold: usize,
    top: Vec<Hit>,
}

pub fn query(a: &QueryArgs) -> CliResult {
    let text = a.text.trim();
    if text.is_empty() {
        return Err(Failure::new(EXIT_CONFIG, anyhow::anyhow!("query text is empty")));
    }
    if !(a.cell > 0.0) {
        return Err(Failure::new(EXIT_CONFIG, anyhow::anyhow!("--cell must be positive")));
    }
    let (map, meta) = FeatureMap::load(&a.map).map_err(|e| Failure::new(EXIT_BAD_MAP, e))?;
    let vocab = meta
        .as_ref()
        .and_then(|m| m.vocabulary.clone())
        .unwrap_or_else(LabelVocabulary::standard);
    let pc = match &a.provider {
        Some(p) => read_provider(p)?,
        None => match meta.as_ref().and_then(|m| m.provider_config.clone()) {
            Some(pc) => pc,
            None => {
                log::warn!("map has no provider settings; using the default synthetic provider");
                ProviderConfig::Synthetic(SyntheticConfig {
                    dim: map.dim(),
                    ..Default::default()
                })
            }
        },
    };
    let provider = pc.build(&vocab).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    if provider.dim() != map.dim() {
        return Err(Failure::new(
            EXIT_BAD_MAP,
            anyhow::anyhow!("map dimension {} differs from provider dimension {}", map.dim(), provider.dim()),
        ));
    }
    let q = provider.embed_text(text)?;
    let (above, top) = if map.is_empty() {
        (0, Vec::new())
    } else {
        (map.retrieve(&q, a.theta)?.len(), map.top_k(&q, a.topk)?)
    };
    let out = QueryOutput {
        query: text,
        theta: a.theta,
        entries: map.len(),
        above_threshold: above,
        top,
    };
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &out).context("writing results")?;
    writeln!(stdout).context("writing results")?;

    if let Some(dir) = &a.heatmap {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let (lo, hi) = map.xy_bounds().unwrap_or(([0.0, 0.0], [0.0, 0.0]));
        let spec = HeatmapSpec::covering(lo, hi, a.cell);
        let hm = if map.is_empty() {
            semmap::feature_map::Heatmap {
                spec,
                values: vec![HEATMAP_EMPTY; spec.width as usize * spec.height as usize],
            }
        } else {
            map.heatmap(&q, &spec)?
        };
        hm.write_pgm(&dir.join("heatmap.pgm"))?;
        let mut csv = String::from("cx,cy,x,y,score\n");
        for cy in 0..spec.height as usize {
            for cx in 0..spec.width as usize {
                let x = spec.origin[0] + (cx as f64 + 0.5) * spec.cell;
                let y = spec.origin[1] + (cy as f64 + 0.5) * spec.cell;
                csv.push_str(&format!("{cx},{cy},{x},{y},{}\n", hm.get(cx, cy)));
            }
        }
        let cp = dir.join("heatmap.csv");
        std::fs::write(&cp, csv).with_context(|| format!("writing {}", cp.display()))?;
        let side = serde_json::json!({
            "query": text,
            "spec": spec,
            "sentinel": HEATMAP_EMPTY,
            "pgm_first_row": "max_y",
        });
        let jp = dir.join("heatmap.json");
        std::fs::write(&jp, serde_json::to_string_pretty(&side).context("serializing heatmap")?)
            .with_context(|| format!("writing {}", jp.display()))?;
    }
    Ok(())
}

pub fn bench(entries: usize, dim: usize, frames: usize, queries: usize, json: Option<&Path>) -> CliResult {
    let cfg = BenchConfig {
        entries,
        dim,
        frames,
        queries,
        ..Default::default()
    };
    let report = run_bench(&cfg).map_err(|e| match e {
        semmap::Error::Config(_) => Failure::new(EXIT_CONFIG, e),
        e => e.into(),
    })?;
    print!("{}", report.table());
    if let Some(p) = json {
        let text = serde_json::to_string_pretty(&report).context("serializing bench report")?;
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}
