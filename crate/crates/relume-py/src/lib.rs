//! Python extension module exposing the main frame types and operations:
//! linear-domain conversions, clipping, compositing, metrics, the
//! copy-paste hallucinator, episode synthesis and the frame-selection
//! environment.

use std::rc::Rc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use relume::autoexposure::{synthesize_episode, AutoExposureModel, Episode, EpisodeSpec};
use relume::frame_select::{FrameSelectEnv, ReferenceMode};
use relume::halluc::{oracle_hallucinate, Hallucinator, OracleHallucinator};
use relume::imaging::{self, ClipParams, PixelFrame};

fn to_py_err(err: relume::Error) -> PyErr {
    match err {
        relume::Error::InvalidInput(_) | relume::Error::Config(_) | relume::Error::Format(_) => {
            PyValueError::new_err(err.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Linear-radiance frame; values are non-negative and unbounded above.
#[pyclass(name = "HdrFrame")]
#[derive(Clone)]
struct PyHdrFrame {
    inner: imaging::HdrFrame,
}

#[pymethods]
impl PyHdrFrame {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(Self { inner: imaging::HdrFrame::new(width, height, channels, data).map_err(to_py_err)? })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    /// Flat interleaved samples (row-major, RGBRGB...).
    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "HdrFrame({}x{}x{})",
            self.inner.width(),
            self.inner.height(),
            self.inner.channels()
        )
    }
}

/// Display-referred or normalized-linear frame with values in [0, 1].
#[pyclass(name = "LdrFrame")]
#[derive(Clone)]
struct PyLdrFrame {
    inner: imaging::LdrFrame,
}

#[pymethods]
impl PyLdrFrame {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(Self { inner: imaging::LdrFrame::new(width, height, channels, data).map_err(to_py_err)? })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "LdrFrame({}x{}x{})",
            self.inner.width(),
            self.inner.height(),
            self.inner.channels()
        )
    }
}

/// Per-pixel overexposure mask (true = invalid/saturated).
#[pyclass(name = "SatMask")]
#[derive(Clone)]
struct PySatMask {
    inner: imaging::SatMask,
}

#[pymethods]
impl PySatMask {
    #[new]
    fn new(width: usize, height: usize, data: Vec<bool>) -> PyResult<Self> {
        Ok(Self { inner: imaging::SatMask::new(width, height, data).map_err(to_py_err)? })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn data(&self) -> Vec<bool> {
        self.inner.data().to_vec()
    }

    /// Masked fraction of the frame.
    fn area(&self) -> f64 {
        self.inner.area()
    }

    fn count(&self) -> usize {
        self.inner.count()
    }
}

#[pyfunction]
#[pyo3(signature = (img, gamma = 2.0))]
fn linearize(img: &PyLdrFrame, gamma: f32) -> PyResult<PyLdrFrame> {
    Ok(PyLdrFrame { inner: imaging::linearize(&img.inner, gamma).map_err(to_py_err)? })
}

#[pyfunction]
#[pyo3(signature = (img, gamma = 2.0))]
fn delinearize(img: &PyLdrFrame, gamma: f32) -> PyResult<PyLdrFrame> {
    Ok(PyLdrFrame { inner: imaging::delinearize(&img.inner, gamma).map_err(to_py_err)? })
}

#[pyfunction]
fn apply_exposure(img: &PyHdrFrame, e: f32) -> PyResult<PyHdrFrame> {
    Ok(PyHdrFrame { inner: imaging::apply_exposure(&img.inner, e).map_err(to_py_err)? })
}

/// Nearest-rank percentile of a sample collection.
#[pyfunction]
fn percentile(values: Vec<f32>, p: f64) -> PyResult<f32> {
    imaging::percentile(&values, p).map_err(to_py_err)
}

/// Clips an HDR pair to (current LDR, reference LDR, mask, ground truth).
#[pyfunction]
#[pyo3(signature = (cur, reference, ldr_percentile = 85.0, gt_percentile = 95.0, saturation_eps = 1e-3))]
fn make_ldr_pair(
    cur: &PyHdrFrame,
    reference: &PyHdrFrame,
    ldr_percentile: f64,
    gt_percentile: f64,
    saturation_eps: f32,
) -> PyResult<(PyLdrFrame, PyLdrFrame, PySatMask, PyHdrFrame)> {
    let params = ClipParams { ldr_percentile, gt_percentile, saturation_eps };
    let pair = imaging::make_ldr_pair(&cur.inner, &reference.inner, &params).map_err(to_py_err)?;
    Ok((
        PyLdrFrame { inner: pair.cur },
        PyLdrFrame { inner: pair.reference },
        PySatMask { inner: pair.mask },
        PyHdrFrame { inner: pair.gt },
    ))
}

#[pyfunction]
fn composite_output(
    ldr: &PyLdrFrame,
    halluc: &PyHdrFrame,
    mask: &PySatMask,
) -> PyResult<PyHdrFrame> {
    Ok(PyHdrFrame {
        inner: imaging::composite_output(&ldr.inner, &halluc.inner, &mask.inner)
            .map_err(to_py_err)?,
    })
}

#[pyfunction]
fn blend_on_switch(
    out_new_ref: &PyHdrFrame,
    out_old_ref: &PyHdrFrame,
    t_since_switch: usize,
    ramp: usize,
) -> PyResult<PyHdrFrame> {
    Ok(PyHdrFrame {
        inner: imaging::blend_on_switch(&out_new_ref.inner, &out_old_ref.inner, t_since_switch, ramp)
            .map_err(to_py_err)?,
    })
}

#[pyfunction]
fn mse_hdr(a: &PyHdrFrame, b: &PyHdrFrame) -> PyResult<f64> {
    imaging::mse(&a.inner, &b.inner).map_err(to_py_err)
}

#[pyfunction]
fn mse(a: &PyLdrFrame, b: &PyLdrFrame) -> PyResult<f64> {
    imaging::mse(&a.inner, &b.inner).map_err(to_py_err)
}

#[pyfunction]
fn psnr(a: &PyLdrFrame, b: &PyLdrFrame) -> PyResult<f64> {
    imaging::psnr(&a.inner, &b.inner).map_err(to_py_err)
}

#[pyfunction]
fn ssim(a: &PyLdrFrame, b: &PyLdrFrame) -> PyResult<f64> {
    imaging::ssim(&a.inner, &b.inner).map_err(to_py_err)
}

/// Copy-paste hallucination: rescaled reference content inside the mask.
#[pyfunction]
fn oracle_fill(
    cur: &PyLdrFrame,
    reference: &PyLdrFrame,
    mask: &PySatMask,
) -> PyResult<PyHdrFrame> {
    Ok(PyHdrFrame {
        inner: oracle_hallucinate(&cur.inner, &reference.inner, &mask.inner).map_err(to_py_err)?,
    })
}

/// One synthesized episode: corrupted LDR stream plus ground truth.
#[pyclass(name = "Episode", unsendable)]
struct PyEpisode {
    inner: Rc<Episode>,
}

#[pymethods]
impl PyEpisode {
    #[new]
    #[pyo3(signature = (seed, length = 150, width = 64, height = 64))]
    fn new(seed: u64, length: usize, width: usize, height: usize) -> PyResult<Self> {
        let spec = EpisodeSpec::new(seed, length, width, height);
        let episode =
            synthesize_episode(&spec, &AutoExposureModel::default()).map_err(to_py_err)?;
        Ok(Self { inner: Rc::new(episode) })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn ldr(&self, t: usize) -> PyResult<PyLdrFrame> {
        self.frame_checked(t)?;
        Ok(PyLdrFrame { inner: self.inner.frames[t].ldr.clone() })
    }

    fn gt(&self, t: usize) -> PyResult<PyHdrFrame> {
        self.frame_checked(t)?;
        Ok(PyHdrFrame { inner: self.inner.frames[t].gt.clone() })
    }

    fn mask(&self, t: usize) -> PyResult<PySatMask> {
        self.frame_checked(t)?;
        Ok(PySatMask { inner: self.inner.frames[t].mask.clone() })
    }

    fn exposure(&self, t: usize) -> PyResult<f64> {
        self.frame_checked(t)?;
        Ok(self.inner.frames[t].exposure)
    }

    fn illumination(&self, t: usize) -> PyResult<f64> {
        self.frame_checked(t)?;
        Ok(self.inner.frames[t].illumination)
    }
}

impl PyEpisode {
    fn frame_checked(&self, t: usize) -> PyResult<()> {
        if t >= self.inner.len() {
            return Err(PyValueError::new_err(format!(
                "frame index {t} out of range (episode length {})",
                self.inner.len()
            )));
        }
        Ok(())
    }
}

/// Frame-selection environment driven by the copy-paste hallucinator.
#[pyclass(name = "FrameSelectEnv", unsendable)]
struct PyFrameSelectEnv {
    env: FrameSelectEnv,
}

#[pymethods]
impl PyFrameSelectEnv {
    #[new]
    #[pyo3(signature = (episode, black_reference = false))]
    fn new(episode: &PyEpisode, black_reference: bool) -> PyResult<Self> {
        let halluc: Rc<dyn Hallucinator> = Rc::new(OracleHallucinator::default());
        let mode = if black_reference {
            ReferenceMode::AlwaysBlack
        } else {
            ReferenceMode::Normal
        };
        let env = FrameSelectEnv::new(episode.inner.clone(), halluc, mode).map_err(to_py_err)?;
        Ok(Self { env })
    }

    fn reset(&mut self, episode: &PyEpisode) -> PyResult<()> {
        self.env.reset(episode.inner.clone()).map_err(to_py_err)
    }

    /// Takes one decision; returns (reward, done, mse, mask_area,
    /// reference_age).
    fn step(&mut self, push: bool) -> PyResult<(f64, bool, f64, f64, usize)> {
        let r = self.env.step(push).map_err(to_py_err)?;
        Ok((r.reward, r.done, r.mse, r.mask_area, r.reference_age))
    }

    #[getter]
    fn done(&self) -> bool {
        self.env.done()
    }

    #[getter]
    fn frame_index(&self) -> usize {
        self.env.frame_index()
    }

    #[getter]
    fn reference_index(&self) -> usize {
        self.env.reference_index()
    }

    fn current_frame(&self) -> PyLdrFrame {
        PyLdrFrame { inner: self.env.state().cur.clone() }
    }

    fn reference_frame(&self) -> PyLdrFrame {
        PyLdrFrame { inner: self.env.state().reference.clone() }
    }
}

#[pymodule]
fn _relume(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHdrFrame>()?;
    m.add_class::<PyLdrFrame>()?;
    m.add_class::<PySatMask>()?;
    m.add_class::<PyEpisode>()?;
    m.add_class::<PyFrameSelectEnv>()?;
    m.add_function(wrap_pyfunction!(linearize, m)?)?;
    m.add_function(wrap_pyfunction!(delinearize, m)?)?;
    m.add_function(wrap_pyfunction!(apply_exposure, m)?)?;
    m.add_function(wrap_pyfunction!(percentile, m)?)?;
    m.add_function(wrap_pyfunction!(make_ldr_pair, m)?)?;
    m.add_function(wrap_pyfunction!(composite_output, m)?)?;
    m.add_function(wrap_pyfunction!(blend_on_switch, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(mse_hdr, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_fill, m)?)?;
    Ok(())
}
