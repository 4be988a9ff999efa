use pyo3::prelude::*;

#[pymodule]
fn evsim(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
