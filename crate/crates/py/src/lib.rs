//! Python module `embedmix_py`: metrics, weight inspection, sequence
//! fixtures and whole experiments. Structured results come back as JSON
//! strings so callers can use `json.loads`.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use embedmix::eval::{self, FrameResult};
use embedmix::experiment;
use embedmix::geometry::BoundingBox;
use embedmix::mixnet::MixNet;
use embedmix::sim::{gen_sequence, save_sequence, Difficulty, SceneConfig};

create_exception!(embedmix_py, EmbedmixError, PyException);

type Quad = (f64, f64, f64, f64);

fn err(e: embedmix::Error) -> PyErr {
    EmbedmixError::new_err(e.to_string())
}

fn bbox(q: Quad) -> embedmix::Result<BoundingBox> {
    BoundingBox::new(q.0, q.1, q.2, q.3)
}

/// One-pass metrics of paired predicted and true `(x, y, w, h)` boxes.
pub fn ope_json(pred: &[Quad], truth: &[Quad]) -> embedmix::Result<String> {
    if pred.len() != truth.len() {
        return Err(embedmix::Error::Config(format!("{} predictions for {} truth boxes", pred.len(), truth.len())));
    }
    let results = pred
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(frame, (p, t))| {
            Ok(FrameResult {
                seq_id: 0,
                frame,
                pred: bbox(*p)?,
                truth: bbox(*t)?,
                seconds: 0.0,
            })
        })
        .collect::<embedmix::Result<Vec<_>>>()?;
    Ok(serde_json::to_string(&eval::ope_summary(&results)?)?)
}

/// Shape summary of a weight file.
pub fn weights_json(path: &str) -> embedmix::Result<String> {
    let (net, momentum) = MixNet::<f32>::load(path)?;
    let params: serde_json::Map<String, serde_json::Value> = net
        .param_names()
        .into_iter()
        .zip(net.params())
        .map(|(name, p)| (name, serde_json::json!(p.dims().as_array())))
        .collect();
    Ok(serde_json::json!({
        "n": net.n(),
        "k": net.k(),
        "mode": net.mode(),
        "has_momentum": momentum.is_some(),
        "params": params,
    })
    .to_string())
}

#[pyfunction]
fn iou(a: Quad, b: Quad) -> PyResult<f64> {
    Ok(bbox(a).map_err(err)?.iou(&bbox(b).map_err(err)?))
}

#[pyfunction]
fn ope_metrics(pred: Vec<Quad>, truth: Vec<Quad>) -> PyResult<String> {
    ope_json(&pred, &truth).map_err(err)
}

#[pyfunction]
fn weights_info(path: &str) -> PyResult<String> {
    weights_json(path).map_err(err)
}

/// Generate a sequence, store it as a fixture at `path` and return its
/// truth boxes.
#[pyfunction]
#[pyo3(signature = (seed, frames, path, size = 64, object_size = 16))]
fn write_sequence(seed: u64, frames: usize, path: &str, size: usize, object_size: usize) -> PyResult<Vec<Quad>> {
    let scene = SceneConfig {
        height: size,
        width: size,
        object_w: object_size,
        object_h: object_size,
        difficulty: Difficulty::default(),
    };
    let seq = gen_sequence(seed, frames, &scene).map_err(err)?;
    save_sequence(&seq, path).map_err(err)?;
    Ok(seq.truth.iter().map(|b| (b.x, b.y, b.w, b.h)).collect())
}

#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str, out_dir: &str) -> PyResult<String> {
    let summary = py
        .detach(|| experiment::run_experiment(config, out_dir, &mut |_| {}))
        .map_err(err)?;
    Ok(summary.to_string())
}

#[pyfunction]
fn evaluate_dir(results: &str) -> PyResult<String> {
    Ok(experiment::evaluate_dir(results).map_err(err)?.to_string())
}

#[pymodule]
fn embedmix_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EmbedmixError", m.py().get_type::<EmbedmixError>())?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(ope_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(weights_info, m)?)?;
    m.add_function(wrap_pyfunction!(write_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_dir, m)?)?;
    Ok(())
}
