//! On-disk dataset of placement / connectivity / heat-map triples built from
//! a placement option sweep, with a hashed manifest.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/arch.json  design.net  floor.png
//! <dir>/items/<id>/placement.txt place.png connect.png route.png util.csv item.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchError, Floorplan};
use crate::cgan::{image_tensor, model_input, GanError, Pair, TrainConfig};
use crate::netlist::{parse_netlist, Netlist, NetlistError};
use crate::placer::{anneal, AnnealSchedule, PlaceError, Placement, SweepGrid};
use crate::raster::{
    self, render_connectivity, render_floorplan, render_heatmap, render_placement, ColorScheme, ImagePlane,
    RasterError, RasterLayout,
};
use crate::router::{route, utilization, ChannelUtilization, RouteConfig, RouteError};
use crate::sha256_hex;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ARCH_FILE: &str = "arch.json";
pub const NETLIST_FILE: &str = "design.net";
pub const FLOOR_FILE: &str = "floor.png";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Place(#[from] PlaceError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Gan(#[from] GanError),
}

impl DatasetError {
    pub fn is_io(&self) -> bool {
        matches!(self, DatasetError::Io { .. } | DatasetError::Raster(RasterError::Io(_)))
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, DatasetError> {
    Err(DatasetError::Invalid(msg.into()))
}

/// Writes through a temporary file so readers never see partial content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutParams {
    pub w: usize,
    pub px_per_tile: usize,
    pub channel_px: usize,
}

impl LayoutParams {
    pub fn of(layout: &RasterLayout) -> Self {
        Self {
            w: layout.w,
            px_per_tile: layout.px_per_tile,
            channel_px: layout.channel_px,
        }
    }

    pub fn layout(&self, fp: &Floorplan) -> Result<RasterLayout, RasterError> {
        RasterLayout::new(fp, self.w, self.px_per_tile, self.channel_px)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub schedule: AnnealSchedule,
    pub placement: String,
    pub place_png: String,
    pub connect_png: String,
    pub route_png: String,
    pub util_csv: String,
    pub overflow: bool,
    /// sha256 of every file above, keyed by path relative to the dataset.
    pub hashes: BTreeMap<String, String>,
}

impl ManifestItem {
    pub fn files(&self) -> [&str; 5] {
        [&self.placement, &self.place_png, &self.connect_png, &self.route_png, &self.util_csv]
    }

    fn verify(&self, dir: &Path) -> Result<(), DatasetError> {
        if self.hashes.len() != 5 {
            return invalid(format!("item {}: expected 5 file hashes", self.id));
        }
        for f in self.files() {
            let want = self
                .hashes
                .get(f)
                .ok_or_else(|| DatasetError::Invalid(format!("item {}: no hash for {f}", self.id)))?;
            let got = sha256_hex(&read(&dir.join(f))?);
            if &got != want {
                return invalid(format!("item {}: {f} does not match its hash", self.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub floorplan_hash: String,
    pub netlist_hash: String,
    pub layout: LayoutParams,
    pub route: RouteConfig,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap() + "\n"
    }
}

/// Everything that determines the generated items.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub grid: SweepGrid,
    pub base_schedule: AnnealSchedule,
    pub route: RouteConfig,
    pub w: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BuildStats {
    pub generated: usize,
    pub reused: usize,
    pub overflowed: usize,
}

pub fn floorplan_hash(fp: &Floorplan) -> String {
    sha256_hex(fp.to_json().as_bytes())
}

pub fn netlist_hash(n: &Netlist) -> String {
    sha256_hex(n.serialize().as_bytes())
}

pub fn item_id(index: usize) -> String {
    format!("p{index:05}")
}

struct Rendered {
    placement: String,
    place: ImagePlane,
    connect: ImagePlane,
    route: ImagePlane,
    util: ChannelUtilization,
    overflow: bool,
}

/// Route and rasterize one placement.
fn render_item(
    fp: &Floorplan,
    netlist: &Netlist,
    placement: &Placement,
    header: &[String],
    route_cfg: &RouteConfig,
    layout: &RasterLayout,
    scheme: &ColorScheme,
) -> Result<Rendered, DatasetError> {
    let routed = route(netlist, placement, fp, route_cfg)?;
    let util = utilization(&routed, fp);
    let place = render_placement(fp, placement, layout, scheme)?;
    let connect = render_connectivity(netlist, placement, layout)?;
    let route_img = render_heatmap(&util, &place, layout, scheme)?;
    Ok(Rendered {
        placement: placement.to_text(netlist, header),
        place,
        connect,
        route: route_img,
        util,
        overflow: routed.overflow,
    })
}

fn build_item(
    dir: &Path,
    index: usize,
    schedule: &AnnealSchedule,
    fp: &Floorplan,
    netlist: &Netlist,
    spec: &DatasetSpec,
    hashes: (&str, &str),
    layout: &RasterLayout,
    scheme: &ColorScheme,
) -> Result<(ManifestItem, bool), DatasetError> {
    let id = item_id(index);
    let rel = format!("items/{id}");
    let item_dir = dir.join(&rel);
    let record = item_dir.join("item.json");
    if let Ok(text) = fs::read_to_string(&record) {
        if let Ok(item) = serde_json::from_str::<ManifestItem>(&text) {
            if &item.schedule == schedule && item.verify(dir).is_ok() {
                return Ok((item, false));
            }
        }
    }
    fs::create_dir_all(&item_dir).map_err(io_err(&item_dir))?;
    let placement = anneal(netlist, fp, schedule, 0)?.placement;
    let header = vec![
        format!("netlist {}", hashes.1),
        format!("floorplan {}", hashes.0),
        schedule.describe(),
    ];
    let r = render_item(fp, netlist, &placement, &header, &spec.route, layout, scheme)?;
    let files: [(String, Vec<u8>); 5] = [
        (format!("{rel}/placement.txt"), r.placement.into_bytes()),
        (format!("{rel}/place.png"), raster::encode_png(&r.place)?),
        (format!("{rel}/connect.png"), raster::encode_png(&r.connect)?),
        (format!("{rel}/route.png"), raster::encode_png(&r.route)?),
        (format!("{rel}/util.csv"), r.util.to_csv().into_bytes()),
    ];
    let mut hashes_out = BTreeMap::new();
    for (path, bytes) in &files {
        write_atomic(&dir.join(path), bytes)?;
        hashes_out.insert(path.clone(), sha256_hex(bytes));
    }
    let [f0, f1, f2, f3, f4] = files.map(|(p, _)| p);
    let item = ManifestItem {
        id,
        schedule: schedule.clone(),
        placement: f0,
        place_png: f1,
        connect_png: f2,
        route_png: f3,
        util_csv: f4,
        overflow: r.overflow,
        hashes: hashes_out,
    };
    write_atomic(&record, serde_json::to_string_pretty(&item).unwrap().as_bytes())?;
    Ok((item, true))
}

/// Generates (or completes) a dataset in `dir`. Items whose files are
/// already present with matching hashes are reused, so reruns are cheap and
/// produce the same manifest.
pub fn build_dataset(
    fp: &Floorplan,
    netlist: &Netlist,
    spec: &DatasetSpec,
    dir: &Path,
) -> Result<(DatasetManifest, BuildStats), DatasetError> {
    let schedules = spec.grid.schedules(&spec.base_schedule)?;
    let layout = RasterLayout::fit(fp, spec.w)?;
    let scheme = ColorScheme::default();
    let (fh, nh) = (floorplan_hash(fp), netlist_hash(netlist));
    if let Ok(text) = fs::read_to_string(dir.join(MANIFEST_FILE)) {
        if let Ok(old) = serde_json::from_str::<DatasetManifest>(&text) {
            if old.floorplan_hash != fh || old.netlist_hash != nh {
                return invalid("directory holds a dataset for a different design");
            }
        }
    }
    fs::create_dir_all(dir.join("items")).map_err(io_err(dir))?;
    write_atomic(&dir.join(ARCH_FILE), fp.to_json().as_bytes())?;
    write_atomic(&dir.join(NETLIST_FILE), netlist.serialize().as_bytes())?;
    write_atomic(&dir.join(FLOOR_FILE), &raster::encode_png(&render_floorplan(fp, &layout, &scheme)?)?)?;
    let built = schedules
        .par_iter()
        .enumerate()
        .map(|(i, s)| build_item(dir, i, s, fp, netlist, spec, (&fh, &nh), &layout, &scheme))
        .collect::<Result<Vec<_>, _>>()?;
    let mut stats = BuildStats::default();
    let items = built
        .into_iter()
        .map(|(item, fresh)| {
            if fresh {
                stats.generated += 1;
            } else {
                stats.reused += 1;
            }
            stats.overflowed += item.overflow as usize;
            item
        })
        .collect();
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        floorplan_hash: fh,
        netlist_hash: nh,
        layout: LayoutParams::of(&layout),
        route: spec.route.clone(),
        items,
    };
    write_atomic(&dir.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok((manifest, stats))
}

/// One loaded item.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub placement: Placement,
    pub place: ImagePlane,
    pub connect: ImagePlane,
    pub route: ImagePlane,
    pub util: ChannelUtilization,
    pub overflow: bool,
}

impl Sample {
    pub fn pair(&self, t_cfg: &TrainConfig) -> Result<Pair, DatasetError> {
        Ok(Pair {
            x: model_input(&self.place, &self.connect, t_cfg.connect_scale, t_cfg.grayscale)?,
            truth: image_tensor(&self.route)?,
        })
    }
}

/// A validated dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub floorplan: Floorplan,
    pub netlist: Netlist,
    pub layout: RasterLayout,
    /// sha256 of `manifest.json`.
    pub manifest_hash: String,
}

impl Dataset {
    /// Loads and checks referential integrity of every entry.
    pub fn open(dir: &Path) -> Result<Self, DatasetError> {
        let raw = read(&dir.join(MANIFEST_FILE))?;
        let manifest: DatasetManifest = serde_json::from_slice(&raw)
            .map_err(|e| DatasetError::Invalid(format!("{}: {e}", MANIFEST_FILE)))?;
        if manifest.version != MANIFEST_VERSION {
            return invalid(format!("unsupported manifest version {}", manifest.version));
        }
        let floorplan = Floorplan::from_json(&read_text(&dir.join(ARCH_FILE))?)?;
        let netlist = parse_netlist(&read_text(&dir.join(NETLIST_FILE))?)?;
        if floorplan_hash(&floorplan) != manifest.floorplan_hash {
            return invalid("floorplan does not match the manifest hash");
        }
        if netlist_hash(&netlist) != manifest.netlist_hash {
            return invalid("netlist does not match the manifest hash");
        }
        let mut seen = std::collections::HashSet::new();
        for item in &manifest.items {
            if !seen.insert(&item.id) {
                return invalid(format!("duplicate item id {}", item.id));
            }
            item.verify(dir)?;
        }
        let layout = manifest.layout.layout(&floorplan)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest_hash: sha256_hex(&raw),
            manifest,
            floorplan,
            netlist,
            layout,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.items.is_empty()
    }

    pub fn item(&self, id: &str) -> Option<&ManifestItem> {
        self.manifest.items.iter().find(|i| i.id == id)
    }

    pub fn load(&self, item: &ManifestItem) -> Result<Sample, DatasetError> {
        let fp = &self.floorplan;
        let png = |f: &str| raster::read_png(&self.dir.join(f));
        let place = png(&item.place_png)?;
        let connect = png(&item.connect_png)?;
        let route_img = png(&item.route_png)?;
        for (img, c, name) in [(&place, 3, "place"), (&connect, 1, "connect"), (&route_img, 3, "route")] {
            if img.width() != self.layout.w || img.height() != self.layout.w || img.channels() != c {
                return invalid(format!("item {}: {name} image has the wrong shape", item.id));
            }
        }
        Ok(Sample {
            id: item.id.clone(),
            placement: Placement::from_text(&read_text(&self.dir.join(&item.placement))?, &self.netlist, fp)?,
            place,
            connect,
            route: route_img,
            util: ChannelUtilization::from_csv(&read_text(&self.dir.join(&item.util_csv))?, fp.cols(), fp.rows())?,
            overflow: item.overflow,
        })
    }

    /// Items in manifest order; overflowed ones only when asked.
    pub fn samples(&self, include_overflow: bool) -> Result<Vec<Sample>, DatasetError> {
        self.manifest
            .items
            .iter()
            .filter(|i| include_overflow || !i.overflow)
            .map(|i| self.load(i))
            .collect()
    }
}

/// Splits off the trailing `val_frac` of `items` as a validation set.
pub fn split<T: Clone>(items: &[T], val_frac: f64) -> (Vec<T>, Vec<T>) {
    let n_val = ((items.len() as f64) * val_frac).round() as usize;
    let cut = items.len() - n_val.min(items.len());
    (items[..cut].to_vec(), items[cut..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_floorplan, FloorplanSpec};
    use crate::netlist::{generate_synthetic, SyntheticParams};

    fn design() -> (Floorplan, Netlist) {
        let fp = build_floorplan(&FloorplanSpec::default()).unwrap();
        let n = generate_synthetic(
            &SyntheticParams {
                n_clb: 12,
                n_io_in: 4,
                n_io_out: 2,
                n_mem: 1,
                n_mult: 1,
                ..SyntheticParams::default()
            },
            3,
        )
        .unwrap();
        (fp, n)
    }

    fn spec(seeds: Vec<u64>) -> DatasetSpec {
        DatasetSpec {
            grid: SweepGrid {
                seeds,
                alpha_ts: vec![0.8],
                inner_nums: vec![0.5],
                ..SweepGrid::default()
            },
            base_schedule: AnnealSchedule::default(),
            route: RouteConfig::default(),
            w: 64,
        }
    }

    fn files_under(dir: &Path, ext: &str) -> usize {
        let mut n = 0;
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                n += files_under(&p, ext);
            } else if p.extension().is_some_and(|e| e == ext) {
                n += 1;
            }
        }
        n
    }

    #[test]
    fn counts_and_idempotence() {
        let (fp, n) = design();
        let tmp = tempfile::tempdir().unwrap();
        let (m, stats) = build_dataset(&fp, &n, &spec(vec![1, 2]), tmp.path()).unwrap();
        assert_eq!(m.items.len(), 2);
        assert_eq!(stats.generated, 2);
        assert_eq!(files_under(tmp.path(), "png"), 7);
        assert_eq!(files_under(tmp.path(), "csv"), 2);
        assert_eq!(files_under(tmp.path(), "txt"), 2);
        let first = fs::read(tmp.path().join(MANIFEST_FILE)).unwrap();

        let (m2, stats) = build_dataset(&fp, &n, &spec(vec![1, 2]), tmp.path()).unwrap();
        assert_eq!(stats, BuildStats { generated: 0, reused: 2, overflowed: stats.overflowed });
        assert_eq!(m2, m);
        assert_eq!(fs::read(tmp.path().join(MANIFEST_FILE)).unwrap(), first);

        let ds = Dataset::open(tmp.path()).unwrap();
        let s = ds.samples(true).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].place.channels(), 3);
        let pair = s[0].pair(&TrainConfig::default()).unwrap();
        assert_eq!(pair.x.shape(), &[1, 4, 64, 64]);
    }

    #[test]
    fn resumes_after_partial_run() {
        let (fp, n) = design();
        let tmp = tempfile::tempdir().unwrap();
        build_dataset(&fp, &n, &spec(vec![1]), tmp.path()).unwrap();
        let (m, stats) = build_dataset(&fp, &n, &spec(vec![1, 2]), tmp.path()).unwrap();
        assert_eq!((stats.generated, stats.reused), (1, 1));
        assert_eq!(m.items.len(), 2);
    }

    #[test]
    fn corrupt_file_is_detected() {
        let (fp, n) = design();
        let tmp = tempfile::tempdir().unwrap();
        let (m, _) = build_dataset(&fp, &n, &spec(vec![1]), tmp.path()).unwrap();
        fs::write(tmp.path().join(&m.items[0].util_csv), "kind,x,y,u\n").unwrap();
        assert!(matches!(Dataset::open(tmp.path()), Err(DatasetError::Invalid(_))));
        // a rebuild repairs the item
        let (_, stats) = build_dataset(&fp, &n, &spec(vec![1]), tmp.path()).unwrap();
        assert_eq!(stats.generated, 1);
        Dataset::open(tmp.path()).unwrap();
    }

    #[test]
    fn split_takes_tail() {
        let v: Vec<usize> = (0..10).collect();
        let (a, b) = split(&v, 0.2);
        assert_eq!(a, (0..8).collect::<Vec<_>>());
        assert_eq!(b, vec![8, 9]);
    }
}
