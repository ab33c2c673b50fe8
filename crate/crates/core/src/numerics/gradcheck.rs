use super::{NumericsError, ParamId, ParamStore, Tape, Var};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Compares the tape gradient of `f` with respect to one parameter against
/// central differences, coordinate by coordinate.
///
/// Returns `max |analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
/// All gradients in `store` are zeroed on entry and left holding the analytic
/// gradient of `f`.
pub fn finite_diff_check<F>(store: &mut ParamStore, id: ParamId, epsilon: f64, mut f: F) -> Result<f64, NumericsError>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var, NumericsError>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    finite(tape.value(loss).item()?)?;
    tape.backward(loss, store)?;
    let analytic = store.grad(id).clone();

    let mut eval = |store: &ParamStore| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let loss = f(store, &mut tape)?;
        finite(tape.value(loss).item()?)
    };

    let mut worst: f64 = 0.0;
    for k in 0..analytic.len() {
        let original = store.value(id).data()[k];
        store.value_mut(id).data_mut()[k] = original + epsilon;
        let plus = eval(store);
        store.value_mut(id).data_mut()[k] = original - epsilon;
        let minus = eval(store);
        store.value_mut(id).data_mut()[k] = original;
        let numeric = (plus? - minus?) / (2.0 * epsilon);
        let a = analytic.data()[k];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn finite(x: f64) -> Result<f64, NumericsError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(NumericsError::NonFinite(x))
    }
}
