use pyo3::prelude::*;

#[pymodule]
fn iceflow_py(_m: &Bound<PyModule>) -> PyResult<()> { Ok(()) }
