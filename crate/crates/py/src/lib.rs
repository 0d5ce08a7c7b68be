//! Python bindings: the main dataset type, the simulation designs, and the
//! estimators, with plain lists crossing the boundary.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use stdml::dml::{
    baseline_did, baseline_ols, run_stdml, CrossFitMode, EffectEstimate, FeatureSet, GridDataset,
    ReMode, StdmlConfig,
};
use stdml::dgp::{simulate_block, simulate_pixel, BlockSimConfig, PixelSimConfig};
use stdml::lattice::{self, Grid, Neighborhood, NeighborScheme};
use stdml::treelearn::LearnerConfig;
use stdml::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Validation(_) | Error::Shape(_)
        | Error::Domain(_) | Error::Degenerate(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Wendland basis value at a scaled distance.
#[pyfunction]
fn wendland_value(d: f64) -> PyResult<f64> {
    lattice::wendland_value(d).map_err(to_py_err)
}

/// Matern correlation at distance `d` with the given range and smoothness.
#[pyfunction]
fn matern_correlation(d: f64, range: f64, smoothness: f64) -> PyResult<f64> {
    let spec = stdml::gausfield::MaternSpec::new(range, smoothness).map_err(to_py_err)?;
    stdml::gausfield::matern_correlation(d, &spec).map_err(to_py_err)
}

/// Difference in differences of four group means.
#[pyfunction]
fn naive_did(
    mean_pre_treated: f64,
    mean_pre_control: f64,
    mean_post_treated: f64,
    mean_post_control: f64,
) -> f64 {
    stdml::dml::naive_did(
        mean_pre_treated,
        mean_pre_control,
        mean_post_treated,
        mean_post_control,
    )
}

/// Neighborhood means of per-pixel values on an `m_rows x m_cols` grid.
#[pyfunction]
#[pyo3(signature = (m_rows, m_cols, values, scheme = "queen8"))]
fn neighbor_mean(
    m_rows: usize,
    m_cols: usize,
    values: Vec<f64>,
    scheme: &str,
) -> PyResult<Vec<f64>> {
    let grid = Grid::new(m_rows, m_cols, 1.0, (0.0, 0.0)).map_err(to_py_err)?;
    let nb = Neighborhood::build(&grid, NeighborScheme::parse(scheme).map_err(to_py_err)?);
    lattice::neighbor_mean(&values, &nb).map_err(to_py_err)
}

/// Wendland feature matrix for a unit-spaced grid, as nested lists.
#[pyfunction]
fn basis_features(
    m_rows: usize,
    m_cols: usize,
    spacing: f64,
    knots_per_side: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let grid = Grid::new(m_rows, m_cols, spacing, (0.0, 0.0)).map_err(to_py_err)?;
    let basis = lattice::build_basis(&grid, knots_per_side).map_err(to_py_err)?;
    let features = basis.features();
    Ok((0..features.nrows())
        .map(|i| features.row(i).to_vec())
        .collect())
}

/// A gridded two-period dataset.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: GridDataset,
}

#[pymethods]
impl Dataset {
    /// Simulate the pixel-level design; returns (dataset, true effect).
    #[staticmethod]
    #[pyo3(signature = (nu, seed, m = 32, gamma = 3.0, missing_frac = 0.2, rho = 0.3))]
    fn simulate_pixel(
        nu: f64,
        seed: u64,
        m: usize,
        gamma: f64,
        missing_frac: f64,
        rho: f64,
    ) -> PyResult<(Self, f64)> {
        let mut cfg = PixelSimConfig::new(nu, seed);
        cfg.m = m;
        cfg.gamma = gamma;
        cfg.missing_frac = missing_frac;
        cfg.rho = rho;
        let (data, truth) = simulate_pixel(&cfg).map_err(to_py_err)?;
        Ok((Self { inner: data }, truth.gamma))
    }

    /// Simulate the block-level design; returns (dataset, true effect).
    #[staticmethod]
    #[pyo3(signature = (nu, seed, m = 32, gamma = 3.0, tau2 = 0.25, rho = 0.3))]
    fn simulate_block(
        nu: f64,
        seed: u64,
        m: usize,
        gamma: f64,
        tau2: f64,
        rho: f64,
    ) -> PyResult<(Self, f64)> {
        let mut cfg = BlockSimConfig::new(nu, seed);
        cfg.m = m;
        cfg.gamma = gamma;
        cfg.tau2 = tau2;
        cfg.rho = rho;
        let (data, truth) = simulate_block(&cfg).map_err(to_py_err)?;
        Ok((Self { inner: data }, truth.gamma))
    }

    /// Read a columnar grid CSV file.
    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        let data = stdml::cli::ingest(std::path::Path::new(path)).map_err(to_py_err)?;
        Ok(Self { inner: data })
    }

    /// Write the dataset as a columnar grid CSV file.
    fn write_csv(&self, path: &str) -> PyResult<()> {
        let text = stdml::cli::export_dataset(&self.inner, &[]);
        std::fs::write(path, text).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn n_pixels(&self) -> usize {
        self.inner.n_pixels()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.grid.m_rows(), self.inner.grid.m_cols())
    }

    #[getter]
    fn treated_fraction(&self) -> f64 {
        self.inner.treated_fraction()
    }

    fn missing_fraction(&self, period: usize) -> f64 {
        self.inner.missing_fraction(period)
    }

    #[getter]
    fn y0(&self) -> Vec<Option<f64>> {
        self.inner.y0.clone()
    }

    #[getter]
    fn y1(&self) -> Vec<Option<f64>> {
        self.inner.y1.clone()
    }

    #[getter]
    fn d(&self) -> Vec<u8> {
        self.inner.d.clone()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names.clone()
    }

    fn covariates(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n_pixels())
            .map(|i| self.inner.x.row(i).to_vec())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({}x{} grid, treated {:.3})",
            self.inner.grid.m_rows(),
            self.inner.grid.m_cols(),
            self.inner.treated_fraction()
        )
    }
}

/// A fitted treatment-effect estimate.
#[pyclass]
struct Estimate {
    inner: EffectEstimate,
}

#[pymethods]
impl Estimate {
    #[getter]
    fn method(&self) -> String {
        self.inner.method.clone()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn se(&self) -> f64 {
        self.inner.gamma_se
    }

    #[getter]
    fn ci(&self) -> (f64, f64) {
        (self.inner.ci_lower, self.inner.ci_upper)
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows
    }

    /// Coefficients as (name, value) pairs.
    #[getter]
    fn coefficients(&self) -> Vec<(String, f64)> {
        self.inner
            .coefficient_names
            .iter()
            .cloned()
            .zip(self.inner.theta.iter().copied())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Estimate({}: gamma={:.4}, se={:.4})",
            self.inner.method, self.inner.gamma, self.inner.gamma_se
        )
    }
}

/// Unadjusted OLS baseline.
#[pyfunction]
fn fit_ols(data: &Dataset) -> PyResult<Estimate> {
    baseline_ols(&data.inner).map(|e| Estimate { inner: e }).map_err(to_py_err)
}

/// Spatial difference-in-differences baseline.
#[pyfunction]
#[pyo3(signature = (data, scheme = "queen8"))]
fn fit_did(data: &Dataset, scheme: &str) -> PyResult<Estimate> {
    let nb = Neighborhood::build(
        &data.inner.grid,
        NeighborScheme::parse(scheme).map_err(to_py_err)?,
    );
    baseline_did(&data.inner, &nb).map(|e| Estimate { inner: e }).map_err(to_py_err)
}

/// The two-stage estimator with cross-fitted tree-ensemble first stages.
#[pyfunction]
#[pyo3(signature = (data, seed, features = "xsz", cf = "pixel", k = 10, l = 100,
                    re = "none", nb = "queen8", trees = 200, binary_trees = 50,
                    burn = 100, kept = 1000))]
#[allow(clippy::too_many_arguments)]
fn fit_stdml(
    data: &Dataset,
    seed: u64,
    features: &str,
    cf: &str,
    k: usize,
    l: usize,
    re: &str,
    nb: &str,
    trees: usize,
    binary_trees: usize,
    burn: usize,
    kept: usize,
) -> PyResult<Estimate> {
    let mut cfg = StdmlConfig::new(seed);
    cfg.feature_set = FeatureSet::parse(features).map_err(to_py_err)?;
    cfg.cf_mode = CrossFitMode::parse(cf).map_err(to_py_err)?;
    cfg.k_folds = k;
    cfg.l_basis = l;
    cfg.re_mode = ReMode::parse(re).map_err(to_py_err)?;
    cfg.nb_scheme = NeighborScheme::parse(nb).map_err(to_py_err)?;
    cfg.learner_continuous = LearnerConfig {
        n_trees: trees,
        burn_in: burn,
        kept_draws: kept,
        ..LearnerConfig::continuous_default()
    };
    cfg.learner_binary = LearnerConfig {
        n_trees: binary_trees,
        burn_in: burn,
        kept_draws: kept,
        ..LearnerConfig::binary_default()
    };
    run_stdml(&data.inner, &cfg).map(|e| Estimate { inner: e }).map_err(to_py_err)
}

#[pymodule]
fn stdml_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Estimate>()?;
    m.add_function(wrap_pyfunction!(wendland_value, m)?)?;
    m.add_function(wrap_pyfunction!(matern_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(naive_did, m)?)?;
    m.add_function(wrap_pyfunction!(neighbor_mean, m)?)?;
    m.add_function(wrap_pyfunction!(basis_features, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ols, m)?)?;
    m.add_function(wrap_pyfunction!(fit_did, m)?)?;
    m.add_function(wrap_pyfunction!(fit_stdml, m)?)?;
    Ok(())
}
