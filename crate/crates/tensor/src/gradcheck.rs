use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)` over all coordinates.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Compares backpropagated gradients with central differences
/// `(f(p+h) − f(p−h)) / 2h` for every coordinate of every parameter.
///
/// `f` must be deterministic; it is evaluated on dropout-free graphs.
pub fn grad_check<F>(store: &mut ParamStore<f64>, h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut graph = Graph::new();
    let root = f(&mut graph, store)?;
    let grads = graph.backward(root)?;
    let mut analytic = ParamStore::new();
    for p in store.iter() {
        analytic.add(p.name.clone(), Tensor::zeros(p.value.shape()))?;
    }
    grads.accumulate_into(&mut analytic)?;

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::inference();
        let root = f(&mut g, store)?;
        Ok(g.value(root).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).numel();
        for j in 0..n {
            let original = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = original + h;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[j] = original - h;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let exact = analytic.grad(id).map_or(0.0, |g| g.data()[j]);
            let denom = exact.abs().max(numeric.abs()).max(1e-8);
            let rel = (exact - numeric).abs() / denom;
            report.coordinates += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.name(id).to_string(), j));
            }
        }
    }
    Ok(report)
}
