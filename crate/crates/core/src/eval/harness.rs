use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::degrade::{degrade_bytes, DegradationSpec, Scenario};
use super::preferences::PreferenceMatrix;
use super::EvalError;
use crate::recommend::{image_digest, request_recommendation, LlmBackend, RecommendationRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub stimulus: String,
    #[serde(default)]
    pub extra_responses: Vec<String>,
    /// Source photos for scenarios that cannot be synthesized from `image`
    /// (such as `interference`).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scenario_images: BTreeMap<Scenario, PathBuf>,
}

impl ManifestEntry {
    pub fn source_for(&self, scenario: Scenario) -> &Path {
        self.scenario_images.get(&scenario).unwrap_or(&self.image)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StimulusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl StimulusManifest {
    /// Every stimulus must be in the matrix, and every extra response must
    /// be a column scored for that stimulus.
    pub fn validate_against(&self, matrix: &PreferenceMatrix) -> Result<(), EvalError> {
        for e in &self.entries {
            let offered = matrix
                .offered_responses(&e.stimulus)
                .map_err(|_| EvalError::Manifest(format!("stimulus {:?} is not in the preference matrix", e.stimulus)))?;
            for extra in &e.extra_responses {
                if !offered.contains(extra) {
                    return Err(EvalError::Manifest(format!(
                        "{:?}: extra response {extra:?} has no score in the preference matrix",
                        e.stimulus
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Reads a manifest JSON array. Relative image paths resolve against the
/// manifest's directory and must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<StimulusManifest, EvalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    let mut entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| EvalError::Manifest(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for e in &mut entries {
        e.image = base.join(&e.image);
        for p in e.scenario_images.values_mut() {
            *p = base.join(&*p);
        }
        for p in std::iter::once(&e.image).chain(e.scenario_images.values()) {
            if !p.exists() {
                return Err(EvalError::Manifest(format!("image {} does not exist", p.display())));
            }
        }
    }
    Ok(StimulusManifest { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub stimulus: String,
    pub scenario: Scenario,
    pub suggestions: Vec<String>,
    pub human_top3: Vec<String>,
    pub top1_match: bool,
    pub top3_overlap: usize,
    pub latency_s: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub cells: usize,
    pub failed: usize,
    pub top1_matches: usize,
    pub top1_match_rate: Option<f64>,
    pub mean_latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub backend_id: String,
    pub top1_match_rate: Option<f64>,
    pub mean_latency_s: Option<f64>,
    pub scenarios: Vec<ScenarioSummary>,
    pub cells: Vec<CellResult>,
}

impl EvalReport {
    pub fn scenario(&self, scenario: Scenario) -> Option<&ScenarioSummary> {
        self.scenarios.iter().find(|s| s.scenario == scenario)
    }

    fn summarize(backend_id: String, cells: Vec<CellResult>, scenarios: &[DegradationSpec]) -> Self {
        let summaries = scenarios
            .iter()
            .map(|spec| {
                let group: Vec<&CellResult> = cells.iter().filter(|c| c.scenario == spec.scenario).collect();
                let (rate, latency) = aggregate(&group);
                ScenarioSummary {
                    scenario: spec.scenario,
                    cells: group.len(),
                    failed: group.iter().filter(|c| c.error.is_some()).count(),
                    top1_matches: group.iter().filter(|c| c.top1_match).count(),
                    top1_match_rate: rate,
                    mean_latency_s: latency,
                }
            })
            .collect();
        let all: Vec<&CellResult> = cells.iter().collect();
        let (rate, latency) = aggregate(&all);
        Self { backend_id, top1_match_rate: rate, mean_latency_s: latency, scenarios: summaries, cells }
    }
}

/// Top-1 rate over all cells (failed cells count as misses) and mean
/// latency over cells that returned.
fn aggregate(cells: &[&CellResult]) -> (Option<f64>, Option<f64>) {
    let rate = (!cells.is_empty())
        .then(|| cells.iter().filter(|c| c.top1_match).count() as f64 / cells.len() as f64);
    let latencies: Vec<f64> = cells.iter().filter_map(|c| c.latency_s).collect();
    let latency = (!latencies.is_empty()).then(|| latencies.iter().sum::<f64>() / latencies.len() as f64);
    (rate, latency)
}

struct CellPlan<'a> {
    entry: &'a ManifestEntry,
    spec: DegradationSpec,
    actions: Vec<String>,
    human_top3: Vec<String>,
}

fn plan<'a>(
    manifest: &'a StimulusManifest,
    matrix: &PreferenceMatrix,
    scenarios: &[DegradationSpec],
) -> Result<Vec<CellPlan<'a>>, EvalError> {
    manifest.validate_against(matrix)?;
    for spec in scenarios {
        spec.validate()?;
    }
    let mut cells = Vec::with_capacity(manifest.entries.len() * scenarios.len());
    for entry in &manifest.entries {
        let actions = matrix.offered_responses(&entry.stimulus)?;
        let human_top3 = matrix.rank_human(&entry.stimulus)?;
        for spec in scenarios {
            cells.push(CellPlan { entry, spec: *spec, actions: actions.clone(), human_top3: human_top3.clone() });
        }
    }
    Ok(cells)
}

fn degraded_image(cell: &CellPlan<'_>) -> Result<Vec<u8>, String> {
    let source = cell.entry.source_for(cell.spec.scenario);
    let bytes = fs::read(source).map_err(|e| format!("{}: {e}", source.display()))?;
    degrade_bytes(&bytes, &cell.spec).map_err(|e| e.to_string())
}

fn run_cell(cell: &CellPlan<'_>, backend: &dyn LlmBackend) -> CellResult {
    let mut result = CellResult {
        stimulus: cell.entry.stimulus.clone(),
        scenario: cell.spec.scenario,
        suggestions: Vec::new(),
        human_top3: cell.human_top3.clone(),
        top1_match: false,
        top3_overlap: 0,
        latency_s: None,
        error: None,
    };
    let outcome = degraded_image(cell).and_then(|image| {
        let request = RecommendationRequest::new(image, cell.actions.clone()).map_err(|e| e.to_string())?;
        request_recommendation(backend, request).map_err(|e| e.to_string())
    });
    match outcome {
        Ok(rec) => {
            result.top1_match = rec.suggestions.first() == cell.human_top3.first();
            let human: HashSet<&String> = cell.human_top3.iter().collect();
            result.top3_overlap = rec.suggestions.iter().filter(|s| human.contains(s)).count();
            result.latency_s = Some(rec.latency);
            result.suggestions = rec.suggestions;
        }
        Err(e) => result.error = Some(e),
    }
    result
}

/// One fresh recommendation per (stimulus, scenario) cell, compared with the
/// human top-3. Backend and image errors are recorded on the cell.
pub fn run_eval(
    manifest: &StimulusManifest,
    matrix: &PreferenceMatrix,
    backend: &dyn LlmBackend,
    scenarios: &[DegradationSpec],
    parallel: usize,
) -> Result<EvalReport, EvalError> {
    let cells = plan(manifest, matrix, scenarios)?;
    let results: Vec<CellResult> = if parallel <= 1 {
        cells.iter().map(|c| run_cell(c, backend)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| EvalError::Io(e.to_string()))?;
        pool.install(|| cells.par_iter().map(|c| run_cell(c, backend)).collect())
    };
    Ok(EvalReport::summarize(backend.id(), results, scenarios))
}

/// Digest → reply table in which every cell answers with its human top-3.
pub fn faithful_mock_responses(
    manifest: &StimulusManifest,
    matrix: &PreferenceMatrix,
    scenarios: &[DegradationSpec],
) -> Result<BTreeMap<String, String>, EvalError> {
    let mut out = BTreeMap::new();
    for cell in plan(manifest, matrix, scenarios)? {
        let image = degraded_image(&cell).map_err(EvalError::Decode)?;
        let reply = cell.human_top3.join(", ");
        let digest = image_digest(&image);
        if let Some(prev) = out.insert(digest.clone(), reply.clone()) {
            if prev != reply {
                return Err(EvalError::Manifest(format!(
                    "{} / {}: degraded image collides with another cell",
                    cell.entry.stimulus, cell.spec.scenario
                )));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(EvalError::InvalidSpec(format!("unknown report format {other:?}"))),
        }
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.digits$}"))
}

pub fn render_markdown(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Recommendation accuracy report\n");
    let _ = writeln!(s, "- backend: `{}`", report.backend_id);
    let _ = writeln!(s, "- top-1 match rate: {}", fmt_opt(report.top1_match_rate, 3));
    let _ = writeln!(s, "- mean latency (s): {}\n", fmt_opt(report.mean_latency_s, 3));
    let _ = writeln!(s, "## Per scenario\n");
    let _ = writeln!(s, "| scenario | cells | failed | top-1 matches | top-1 rate | mean latency (s) |");
    let _ = writeln!(s, "|---|---|---|---|---|---|");
    for sc in &report.scenarios {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            sc.scenario,
            sc.cells,
            sc.failed,
            sc.top1_matches,
            fmt_opt(sc.top1_match_rate, 3),
            fmt_opt(sc.mean_latency_s, 3)
        );
    }
    let _ = writeln!(s, "\n## Cells\n");
    let _ = writeln!(s, "| stimulus | scenario | suggestions | human top-3 | top-1 | overlap | latency (s) |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|");
    for c in &report.cells {
        let suggestions = match &c.error {
            Some(e) => format!("error: {}", e.replace('|', "/")),
            None => c.suggestions.join(", "),
        };
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} |",
            c.stimulus,
            c.scenario,
            suggestions,
            c.human_top3.join(", "),
            if c.top1_match { "yes" } else { "no" },
            c.top3_overlap,
            fmt_opt(c.latency_s, 3)
        );
    }
    s
}

pub fn emit_report(report: &EvalReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let text = match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).map_err(|e| EvalError::Io(e.to_string()))? + "\n",
        ReportFormat::Markdown => render_markdown(report),
    };
    fs::write(path.as_ref(), text).map_err(|e| EvalError::Io(format!("{}: {e}", path.as_ref().display())))
}
