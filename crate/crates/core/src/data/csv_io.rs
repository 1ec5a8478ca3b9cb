use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{AgentState, Scene};

pub const CSV_HEADER: [&str; 6] = ["scene_id", "agent_id", "step", "timestamp_ms", "x", "y"];
pub const COORD_DECIMALS: usize = 10;
/// Milliseconds per step in written timestamps.
pub const STEP_MS: u64 = 100;

/// Writes scenes in the trajectory CSV format.
pub fn write_csv(out: &mut impl Write, scenes: &[Scene]) -> std::io::Result<()> {
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for scene in scenes {
        for t in 0..scene.steps() {
            for (agent, s) in scene.agent_ids().iter().zip(scene.frame(t)) {
                writeln!(
                    out,
                    "{},{},{t},{},{:.p$},{:.p$}",
                    scene.id(),
                    agent,
                    t as u64 * STEP_MS,
                    s.x,
                    s.y,
                    p = COORD_DECIMALS
                )?;
            }
        }
    }
    Ok(())
}

pub fn save_csv(path: &Path, scenes: &[Scene]) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(&mut buf, scenes).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Columns {
    scene: Option<usize>,
    /// INTERACTION case ids are only unique within one file.
    file_scoped: bool,
    agent: usize,
    step: usize,
    x: usize,
    y: usize,
}

impl Columns {
    fn detect(header: &csv::StringRecord, fail: &dyn Fn(usize, String) -> Error) -> Result<Self> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let need = |name: &str| find(name).ok_or_else(|| fail(1, format!("missing column {name:?}")));
        if find("scene_id").is_some() || find("agent_id").is_some() {
            Ok(Columns {
                scene: Some(need("scene_id")?),
                file_scoped: false,
                agent: need("agent_id")?,
                step: need("step")?,
                x: need("x")?,
                y: need("y")?,
            })
        } else if find("track_id").is_some() {
            Ok(Columns {
                scene: find("case_id"),
                file_scoped: true,
                agent: need("track_id")?,
                step: need("frame_id")?,
                x: need("x")?,
                y: need("y")?,
            })
        } else {
            Err(fail(
                1,
                format!(
                    "unrecognized header; expected {} or INTERACTION track columns",
                    CSV_HEADER.join(",")
                ),
            ))
        }
    }
}

/// Rows of one scene in file order.
#[derive(Default)]
struct RawScene {
    agents: Vec<String>,
    agent_index: HashMap<String, usize>,
    // step -> agent -> (state, line)
    steps: BTreeMap<i64, BTreeMap<usize, AgentState>>,
}

/// Reads a trajectory CSV (own or INTERACTION schema).
///
/// Agents keep their order of first appearance. Each scene is cropped to the
/// longest run of consecutive steps in which every agent is present, and every
/// step is marked observed.
pub fn load_csv(path: &Path) -> Result<Vec<Scene>> {
    let fail = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = match reader.headers() {
        Ok(h) if h.iter().any(|c| !c.trim().is_empty()) => h.clone(),
        Ok(_) => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "empty file".into(),
            })
        }
        Err(e) => return Err(fail(1, e.to_string())),
    };
    let cols = Columns::detect(&header, &fail)?;
    let default_scene = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());

    let mut order: Vec<String> = Vec::new();
    let mut scenes: HashMap<String, RawScene> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            fail(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| {
            record
                .get(k)
                .map(str::trim)
                .ok_or_else(|| fail(line, format!("missing field {}", header.get(k).unwrap_or("?"))))
        };
        let number = |k: usize| -> Result<f64> {
            let text = field(k)?;
            let v: f64 = text
                .parse()
                .map_err(|_| fail(line, format!("{}: not a number: {text:?}", &header[k])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(fail(line, format!("{}: non-finite value", &header[k])))
            }
        };
        let scene_id = match cols.scene {
            Some(k) if cols.file_scoped => format!("{default_scene}-{}", field(k)?),
            Some(k) => field(k)?.to_string(),
            None => default_scene.clone(),
        };
        let agent = field(cols.agent)?.to_string();
        let step_text = field(cols.step)?;
        let step: i64 = step_text
            .parse()
            .map_err(|_| fail(line, format!("{}: not an integer: {step_text:?}", &header[cols.step])))?;
        let state = AgentState::new(number(cols.x)?, number(cols.y)?);

        let raw = scenes.entry(scene_id.clone()).or_insert_with(|| {
            order.push(scene_id.clone());
            RawScene::default()
        });
        let next = raw.agents.len();
        let index = *raw.agent_index.entry(agent.clone()).or_insert(next);
        if index == next {
            raw.agents.push(agent.clone());
        }
        if raw.steps.entry(step).or_default().insert(index, state).is_some() {
            return Err(fail(
                line,
                format!("duplicate row for scene {scene_id}, agent {agent}, step {step}"),
            ));
        }
    }
    if order.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    order
        .into_iter()
        .map(|id| {
            let raw = scenes.remove(&id).expect("scene recorded in order");
            assemble(&id, raw).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Longest run of consecutive steps with the full cast present.
fn assemble(id: &str, raw: RawScene) -> Result<Scene> {
    let n = raw.agents.len();
    let mut best: Option<(i64, usize)> = None;
    let mut run: Option<(i64, usize)> = None;
    let mut last: Option<i64> = None;
    for (&step, present) in &raw.steps {
        let complete = present.len() == n;
        run = match (complete, run, last) {
            (false, _, _) => None,
            (true, Some((start, len)), Some(prev)) if prev + 1 == step => Some((start, len + 1)),
            (true, _, _) => Some((step, 1)),
        };
        last = Some(step);
        if let Some(r) = run {
            if best.map_or(true, |b| r.1 > b.1) {
                best = Some(r);
            }
        }
    }
    let (start, len) = best.ok_or_else(|| {
        Error::InvalidScene(format!("scene {id}: no step has all {n} agents present"))
    })?;
    let frames = (start..start + len as i64)
        .map(|t| raw.steps[&t].values().copied().collect())
        .collect();
    Scene::new(id, raw.agents, frames, len)
}
