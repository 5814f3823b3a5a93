//! Python bindings: floorplans, netlists, placement, routing, rendering,
//! trained models and the evaluation metrics.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use routecast::arch::{self, FloorplanSpec};
use routecast::cgan::{self, ModelCheckpoint};
use routecast::netlist::{self, SyntheticParams};
use routecast::placer::{self, AnnealSchedule};
use routecast::raster::{self, ColorScheme, ImagePlane as CoreImage, RasterLayout};
use routecast::router::{self, ChannelUtilization, RouteConfig, ScoreMode};
use routecast::{dataset, eval};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn gan_err(e: cgan::GanError) -> PyErr {
    match e {
        cgan::GanError::Io(_) => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

#[pyclass(module = "routecast_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Floorplan(arch::Floorplan);

#[pymethods]
impl Floorplan {
    #[new]
    #[pyo3(signature = (cols=8, rows=8, mem_col=2, mult_col=6, capacity=16, ports=8))]
    fn new(cols: usize, rows: usize, mem_col: usize, mult_col: usize, capacity: u32, ports: u32) -> PyResult<Self> {
        arch::build_floorplan(&FloorplanSpec {
            cols,
            rows,
            mem_col,
            mult_col,
            channel_capacity: capacity,
            io_ports_per_pad: ports,
        })
        .map(Floorplan)
        .map_err(value_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        arch::Floorplan::from_json(text).map(Floorplan).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.0.cols()
    }

    #[getter]
    fn rows(&self) -> usize {
        self.0.rows()
    }

    #[getter]
    fn n_segments(&self) -> usize {
        self.0.n_segments()
    }
}

#[pyclass(module = "routecast_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Netlist(netlist::Netlist);

#[pymethods]
impl Netlist {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        netlist::parse_netlist(text).map(Netlist).map_err(value_err)
    }

    #[staticmethod]
    #[pyo3(signature = (seed, n_clb=40, n_io_in=16, n_io_out=8, n_mem=4, n_mult=4))]
    fn synthetic(seed: u64, n_clb: usize, n_io_in: usize, n_io_out: usize, n_mem: usize, n_mult: usize) -> PyResult<Self> {
        let p = SyntheticParams {
            n_clb,
            n_io_in,
            n_io_out,
            n_mem,
            n_mult,
            ..SyntheticParams::default()
        };
        netlist::generate_synthetic(&p, seed).map(Netlist).map_err(value_err)
    }

    fn serialize(&self) -> String {
        self.0.serialize()
    }

    #[getter]
    fn n_blocks(&self) -> usize {
        self.0.blocks().len()
    }

    #[getter]
    fn n_nets(&self) -> usize {
        self.0.nets().len()
    }
}

#[pyclass(module = "routecast_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Placement {
    inner: placer::Placement,
    #[pyo3(get)]
    cost: f64,
}

#[pymethods]
impl Placement {
    fn to_text(&self, netlist: &Netlist) -> String {
        self.inner.to_text(&netlist.0, &[])
    }
}

#[pyclass(module = "routecast_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Utilization(ChannelUtilization);

#[pymethods]
impl Utilization {
    fn values(&self) -> Vec<f32> {
        self.0.values().collect()
    }

    fn max(&self) -> f32 {
        self.0.max()
    }

    fn to_csv(&self) -> String {
        self.0.to_csv()
    }

    /// Mean, max or p95 over the whole floorplan.
    #[pyo3(signature = (mode="mean"))]
    fn score(&self, mode: &str) -> PyResult<f32> {
        let m: ScoreMode = mode.parse().map_err(value_err)?;
        router::congestion_score(&self.0, None, m).map_err(value_err)
    }
}

#[pyclass(module = "routecast_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Image(CoreImage);

#[pymethods]
impl Image {
    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.0.channels()
    }

    /// Row-major `height * width * channels` floats in `[0, 1]`.
    fn data(&self) -> Vec<f32> {
        self.0.data().to_vec()
    }

    fn to_png<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = raster::encode_png(&self.0).map_err(value_err)?;
        Ok(PyBytes::new(py, &bytes))
    }

    #[staticmethod]
    fn read_png(path: PathBuf) -> PyResult<Self> {
        raster::read_png(&path).map(Image).map_err(|e| PyIOError::new_err(e.to_string()))
    }
}

#[pyclass(module = "routecast_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct RouteResult {
    #[pyo3(get)]
    utilization: Utilization,
    #[pyo3(get)]
    overflow: bool,
    #[pyo3(get)]
    iterations: usize,
}

#[pyfunction]
#[pyo3(signature = (netlist, floorplan, seed=1, alpha_t=0.8, inner_num=1.0))]
fn anneal(netlist: &Netlist, floorplan: &Floorplan, seed: u64, alpha_t: f64, inner_num: f64) -> PyResult<Placement> {
    let s = AnnealSchedule {
        seed,
        alpha_t,
        inner_num,
        ..AnnealSchedule::default()
    };
    let r = placer::anneal(&netlist.0, &floorplan.0, &s, 0).map_err(value_err)?;
    Ok(Placement {
        inner: r.placement,
        cost: r.final_cost,
    })
}

#[pyfunction]
fn route(netlist: &Netlist, placement: &Placement, floorplan: &Floorplan) -> PyResult<RouteResult> {
    let r = router::route(&netlist.0, &placement.inner, &floorplan.0, &RouteConfig::default()).map_err(value_err)?;
    Ok(RouteResult {
        utilization: Utilization(router::utilization(&r, &floorplan.0)),
        overflow: r.overflow,
        iterations: r.iterations,
    })
}

fn layout(fp: &Floorplan, w: usize) -> PyResult<RasterLayout> {
    RasterLayout::fit(&fp.0, w).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (floorplan, placement, w=64))]
fn render_placement(floorplan: &Floorplan, placement: &Placement, w: usize) -> PyResult<Image> {
    let l = layout(floorplan, w)?;
    raster::render_placement(&floorplan.0, &placement.inner, &l, &ColorScheme::default())
        .map(Image)
        .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (netlist, floorplan, placement, w=64))]
fn render_connectivity(netlist: &Netlist, floorplan: &Floorplan, placement: &Placement, w: usize) -> PyResult<Image> {
    let l = layout(floorplan, w)?;
    raster::render_connectivity(&netlist.0, &placement.inner, &l)
        .map(Image)
        .map_err(value_err)
}

/// Paints `utilization` onto the placement image `base`.
#[pyfunction]
fn render_heatmap(floorplan: &Floorplan, utilization: &Utilization, base: &Image) -> PyResult<Image> {
    let l = layout(floorplan, base.0.width())?;
    raster::render_heatmap(&utilization.0, &base.0, &l, &ColorScheme::default())
        .map(Image)
        .map_err(value_err)
}

#[pyfunction]
fn decode_heatmap(floorplan: &Floorplan, image: &Image) -> PyResult<Utilization> {
    let l = layout(floorplan, image.0.width())?;
    raster::decode_heatmap(&image.0, &l, &ColorScheme::default())
        .map(|d| Utilization(d.utilization))
        .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (floorplan, predicted, truth, tolerance=eval::DEFAULT_TOLERANCE))]
fn per_pixel_accuracy(floorplan: &Floorplan, predicted: &Image, truth: &Utilization, tolerance: f64) -> PyResult<f64> {
    let l = layout(floorplan, predicted.0.width())?;
    eval::per_pixel_accuracy(&[(predicted.0.clone(), truth.0.clone())], &l, &ColorScheme::default(), tolerance)
        .map(|r| r.per_pixel_acc)
        .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (predicted, truth, k=10))]
fn topk_overlap(predicted: BTreeMap<String, f64>, truth: BTreeMap<String, f64>, k: usize) -> PyResult<f64> {
    eval::topk_overlap(&predicted, &truth, k).map(|r| r.overlap).map_err(value_err)
}

#[pyclass(module = "routecast_py", frozen)]
struct Model(ModelCheckpoint);

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ModelCheckpoint::load(&path).map(Model).map_err(gan_err)
    }

    /// Trains a fresh model on every routable item of a dataset directory.
    #[staticmethod]
    #[pyo3(signature = (dataset_dir, epochs=1, base_width=None, seed=0))]
    fn train(py: Python<'_>, dataset_dir: PathBuf, epochs: usize, base_width: Option<usize>, seed: u64) -> PyResult<Self> {
        py.detach(|| {
            let ds = dataset::Dataset::open(&dataset_dir).map_err(value_err)?;
            let t = cgan::TrainConfig {
                epochs,
                seed,
                ..cgan::TrainConfig::default()
            };
            let mut g = cgan::GeneratorConfig::for_image(ds.layout.w);
            if let Some(b) = base_width {
                g.base_width = b;
            }
            let d = cgan::DiscriminatorConfig::for_generator(&g);
            let pairs = ds
                .samples(false)
                .and_then(|s| s.iter().map(|s| s.pair(&t)).collect::<Result<Vec<_>, _>>())
                .map_err(value_err)?;
            cgan::train(&pairs, &g, &d, &t, &mut |_| {}).map(Model).map_err(gan_err)
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(gan_err)
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.0.image_size
    }

    #[getter]
    fn step(&self) -> u64 {
        self.0.step
    }

    /// Forecast heat map for a placement image and its connectivity image.
    fn infer(&self, py: Python<'_>, place: &Image, connect: &Image) -> PyResult<Image> {
        let t = &self.0.t_cfg;
        let x = cgan::model_input(&place.0, &connect.0, t.connect_scale, t.grayscale).map_err(gan_err)?;
        py.detach(|| self.0.infer_image(&x)).map(Image).map_err(gan_err)
    }
}

/// Builds a dataset directory from a sweep over seeds, cooling rates and
/// moves per temperature. Returns the number of items.
#[pyfunction]
#[pyo3(signature = (floorplan, netlist, directory, seeds, alpha_ts=vec![0.8], inner_nums=vec![1.0], w=64))]
fn build_dataset(
    py: Python<'_>,
    floorplan: &Floorplan,
    netlist: &Netlist,
    directory: PathBuf,
    seeds: Vec<u64>,
    alpha_ts: Vec<f64>,
    inner_nums: Vec<f64>,
    w: usize,
) -> PyResult<usize> {
    let spec = dataset::DatasetSpec {
        grid: placer::SweepGrid {
            seeds,
            alpha_ts,
            inner_nums,
            algorithms: vec![placer::PlaceAlgorithm::BoundingBox],
        },
        base_schedule: AnnealSchedule::default(),
        route: RouteConfig::default(),
        w,
    };
    py.detach(|| dataset::build_dataset(&floorplan.0, &netlist.0, &spec, &directory))
        .map(|(m, _)| m.items.len())
        .map_err(|e| {
            if e.is_io() {
                PyIOError::new_err(e.to_string())
            } else {
                value_err(e)
            }
        })
}

/// Runs the command-line tool in-process; returns its exit code.
#[pyfunction]
fn cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv = std::iter::once("routecast".to_string()).chain(args);
    match py.detach(|| routecast::cli::run(argv)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.code
        }
    }
}

#[pymodule]
fn routecast_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Floorplan>()?;
    m.add_class::<Netlist>()?;
    m.add_class::<Placement>()?;
    m.add_class::<Utilization>()?;
    m.add_class::<Image>()?;
    m.add_class::<RouteResult>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(anneal, m)?)?;
    m.add_function(wrap_pyfunction!(route, m)?)?;
    m.add_function(wrap_pyfunction!(render_placement, m)?)?;
    m.add_function(wrap_pyfunction!(render_connectivity, m)?)?;
    m.add_function(wrap_pyfunction!(render_heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(decode_heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(per_pixel_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(topk_overlap, m)?)?;
    m.add_function(wrap_pyfunction!(build_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    Ok(())
}
