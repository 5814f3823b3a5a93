//! Image rendering of floorplans, placements, net connectivity and channel
//! heat maps, plus the inverse map from heat-map pixels to utilization.

use std::io::{BufReader, BufWriter};
use std::path::Path;

use thiserror::Error;

use crate::arch::{Dir, Floorplan, Segment, TileKind};
use crate::netlist::Netlist;
use crate::placer::Placement;
use crate::router::ChannelUtilization;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("layout needs {need} px but image is {w} px")]
    LayoutOverflow { need: usize, w: usize },
    #[error("pixel size must be at least 2 (got {0})")]
    TileTooSmall(usize),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("unsupported channel count {0}")]
    Channels(usize),
    #[error("pixel value {0} outside [0, 1]")]
    Range(f32),
    #[error("png: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Rgb = [f32; 3];

/// Row-major HWC float image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self, RasterError> {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, v: f32) -> Result<Self, RasterError> {
        if !matches!(channels, 1 | 3 | 4) {
            return Err(RasterError::Channels(channels));
        }
        if height == 0 || width == 0 {
            return Err(RasterError::DimMismatch("zero-sized image".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data: vec![v; height * width * channels],
        })
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        let mut img = Self::new(height, width, channels)?;
        if data.len() != img.data.len() {
            return Err(RasterError::DimMismatch(format!(
                "{} values for {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(&bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RasterError::Range(bad));
        }
        img.data = data;
        Ok(img)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, v: &[f32]) {
        let i = (y * self.width + x) * self.channels;
        self.data[i..i + self.channels].copy_from_slice(v);
    }

    fn fill_rect(&mut self, r: PixelRect, v: &[f32]) {
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                self.set_pixel(x, y, v);
            }
        }
    }

    /// Planar CHW copy, the layout the network consumes.
    pub fn to_chw(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = vec![0.0; n * self.channels];
        for (p, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * n + p] = v;
            }
        }
        out
    }

    /// Inverse of [`ImagePlane::to_chw`]; values are clamped into [0, 1].
    pub fn from_chw(height: usize, width: usize, channels: usize, chw: &[f32]) -> Result<Self, RasterError> {
        let mut img = Self::new(height, width, channels)?;
        let n = height * width;
        if chw.len() != n * channels {
            return Err(RasterError::DimMismatch(format!("{} values for {height}x{width}x{channels}", chw.len())));
        }
        for p in 0..n {
            for c in 0..channels {
                img.data[p * channels + c] = chw[c * n + p].clamp(0.0, 1.0);
            }
        }
        Ok(img)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorScheme {
    pub white: Rgb,
    pub lightblue: Rgb,
    pub pink: Rgb,
    pub lightyellow: Rgb,
    pub black: Rgb,
    pub gradient_low: Rgb,
    pub gradient_high: Rgb,
}

impl Default for ColorScheme {
    fn default() -> Self {
        Self {
            white: [1.0, 1.0, 1.0],
            lightblue: [0.678, 0.847, 0.902],
            pink: [1.0, 0.753, 0.796],
            lightyellow: [1.0, 1.0, 0.78],
            black: [0.0, 0.0, 0.0],
            gradient_low: [1.0, 1.0, 0.0],
            gradient_high: [0.502, 0.0, 0.502],
        }
    }
}

impl ColorScheme {
    pub fn flat_colors(&self) -> [Rgb; 5] {
        [self.white, self.lightblue, self.pink, self.lightyellow, self.black]
    }

    pub fn tile_color(&self, kind: TileKind) -> Rgb {
        match kind {
            TileKind::Corner => self.white,
            TileKind::Io | TileKind::Clb => self.lightblue,
            TileKind::Mem => self.lightyellow,
            TileKind::Mult => self.pink,
        }
    }

    /// Linear yellow-to-purple ramp; `u` is clamped into [0, 1].
    pub fn gradient(&self, u: f32) -> Rgb {
        let t = u.clamp(0.0, 1.0);
        let (a, b) = (self.gradient_low, self.gradient_high);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
    }
}

pub fn rgb_distance(a: Rgb, b: Rgb) -> f32 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl PixelRect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

/// Maps tiles and channel segments of a floorplan to pixel rectangles in a
/// `w x w` image. The grid is centred; image row 0 is the top (highest `y`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterLayout {
    pub w: usize,
    pub px_per_tile: usize,
    pub channel_px: usize,
    cols: usize,
    rows: usize,
    off_x: usize,
    off_y: usize,
}

impl RasterLayout {
    pub fn new(
        fp: &Floorplan,
        w: usize,
        px_per_tile: usize,
        channel_px: usize,
    ) -> Result<Self, RasterError> {
        Self::for_grid(fp.cols(), fp.rows(), w, px_per_tile, channel_px)
    }

    pub fn for_grid(
        cols: usize,
        rows: usize,
        w: usize,
        px_per_tile: usize,
        channel_px: usize,
    ) -> Result<Self, RasterError> {
        if px_per_tile < 2 {
            return Err(RasterError::TileTooSmall(px_per_tile));
        }
        if channel_px == 0 {
            return Err(RasterError::DimMismatch("channel_px must be positive".into()));
        }
        let span = |n: usize| n * px_per_tile + (n - 1) * channel_px;
        let (need_x, need_y) = (span(cols + 2), span(rows + 2));
        let need = need_x.max(need_y);
        if need > w {
            return Err(RasterError::LayoutOverflow { need, w });
        }
        Ok(Self {
            w,
            px_per_tile,
            channel_px,
            cols,
            rows,
            off_x: (w - need_x) / 2,
            off_y: (w - need_y) / 2,
        })
    }

    /// Largest layout with `px_per_tile = 2 s` and `channel_px = s` fitting
    /// in `w`.
    pub fn fit(fp: &Floorplan, w: usize) -> Result<Self, RasterError> {
        let n = fp.cols().max(fp.rows()) + 2;
        let s = (w / (3 * n - 1)).max(1);
        Self::new(fp, w, 2 * s, s)
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    fn pitch(&self) -> usize {
        self.px_per_tile + self.channel_px
    }

    fn col_px(&self, x: usize) -> usize {
        self.off_x + x * self.pitch()
    }

    fn row_px(&self, y: usize) -> usize {
        self.off_y + (self.rows + 1 - y) * self.pitch()
    }

    pub fn tile_rect(&self, x: usize, y: usize) -> PixelRect {
        PixelRect {
            x: self.col_px(x),
            y: self.row_px(y),
            w: self.px_per_tile,
            h: self.px_per_tile,
        }
    }

    pub fn tile_center(&self, x: usize, y: usize) -> (usize, usize) {
        let r = self.tile_rect(x, y);
        (r.x + r.w / 2, r.y + r.h / 2)
    }

    /// Channel strip of a segment: the gap beside the tile run it spans.
    pub fn segment_strip(&self, s: Segment) -> PixelRect {
        match s.dir {
            Dir::H => PixelRect {
                x: self.col_px(s.x + 1),
                y: self.row_px(s.y + 1) + self.px_per_tile,
                w: self.px_per_tile,
                h: self.channel_px,
            },
            Dir::V => PixelRect {
                x: self.col_px(s.x) + self.px_per_tile,
                y: self.row_px(s.y + 1),
                w: self.channel_px,
                h: self.px_per_tile,
            },
        }
    }

    fn segments(&self) -> impl Iterator<Item = Segment> {
        let (cols, rows) = (self.cols, self.rows);
        let h = (0..=rows).flat_map(move |y| (0..cols).map(move |x| Segment { dir: Dir::H, x, y }));
        let v = (0..rows).flat_map(move |y| (0..=cols).map(move |x| Segment { dir: Dir::V, x, y }));
        h.chain(v)
    }

    /// `true` for every pixel inside some segment strip.
    pub fn channel_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.w * self.w];
        for s in self.segments() {
            let r = self.segment_strip(s);
            for y in r.y..r.y + r.h {
                for x in r.x..r.x + r.w {
                    m[y * self.w + x] = true;
                }
            }
        }
        m
    }

    fn check(&self, fp: &Floorplan) -> Result<(), RasterError> {
        if fp.cols() != self.cols || fp.rows() != self.rows {
            return Err(RasterError::DimMismatch(format!(
                "layout is for {}x{}, floorplan is {}x{}",
                self.cols,
                self.rows,
                fp.cols(),
                fp.rows()
            )));
        }
        Ok(())
    }

    fn check_image(&self, img: &ImagePlane, channels: usize) -> Result<(), RasterError> {
        if img.height != self.w || img.width != self.w || img.channels != channels {
            return Err(RasterError::DimMismatch(format!(
                "expected {0}x{0}x{channels}, got {1}x{2}x{3}",
                self.w, img.height, img.width, img.channels
            )));
        }
        Ok(())
    }
}

pub fn render_floorplan(fp: &Floorplan, layout: &RasterLayout, scheme: &ColorScheme) -> Result<ImagePlane, RasterError> {
    layout.check(fp)?;
    let mut img = ImagePlane::filled(layout.w, layout.w, 3, 1.0)?;
    for (x, y, kind) in fp.tiles() {
        img.fill_rect(layout.tile_rect(x, y), &scheme.tile_color(kind));
    }
    Ok(img)
}

/// Floorplan image with occupied sites blackened. An IO pad with `k` of `P`
/// ports in use gets the first `round(k * area / P)` pixels of its rect, in
/// row-major order.
pub fn render_placement(
    fp: &Floorplan,
    placement: &Placement,
    layout: &RasterLayout,
    scheme: &ColorScheme,
) -> Result<ImagePlane, RasterError> {
    let mut img = render_floorplan(fp, layout, scheme)?;
    let mut used = vec![0usize; fp.width() * fp.height()];
    for s in placement.sites() {
        used[s.y * fp.width() + s.x] += 1;
    }
    let ports = fp.ports_per_pad() as usize;
    for (x, y, kind) in fp.tiles() {
        let k = used[y * fp.width() + x];
        if k == 0 {
            continue;
        }
        let r = layout.tile_rect(x, y);
        if kind == TileKind::Io {
            let n = ((k.min(ports) * r.area()) as f64 / ports as f64).round() as usize;
            for i in 0..n {
                img.set_pixel(r.x + i % r.w, r.y + i / r.w, &scheme.black);
            }
        } else {
            img.fill_rect(r, &scheme.black);
        }
    }
    Ok(img)
}

/// Intensity one net edge adds to each pixel it crosses.
pub const EDGE_INTENSITY: f32 = 0.25;

fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64, mut f: impl FnMut(i64, i64)) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        f(x, y);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Driver-to-sink lines between tile centres, additive then clamped.
pub fn render_connectivity(
    netlist: &Netlist,
    placement: &Placement,
    layout: &RasterLayout,
) -> Result<ImagePlane, RasterError> {
    let w = layout.w;
    let mut acc = vec![0.0f32; w * w];
    for np in netlist.net_pins() {
        let d = placement.site(np.driver);
        let (x0, y0) = layout.tile_center(d.x, d.y);
        for &s in &np.sinks {
            let t = placement.site(s);
            let (x1, y1) = layout.tile_center(t.x, t.y);
            bresenham(x0 as i64, y0 as i64, x1 as i64, y1 as i64, |x, y| {
                acc[y as usize * w + x as usize] += EDGE_INTENSITY;
            });
        }
    }
    acc.iter_mut().for_each(|v| *v = v.min(1.0));
    ImagePlane::from_vec(w, w, 1, acc)
}

/// Paints the strip of every segment with `u > 0` on top of `base`.
pub fn render_heatmap(
    u: &ChannelUtilization,
    base: &ImagePlane,
    layout: &RasterLayout,
    scheme: &ColorScheme,
) -> Result<ImagePlane, RasterError> {
    layout.check_image(base, 3)?;
    if u.cols != layout.cols || u.rows != layout.rows {
        return Err(RasterError::DimMismatch("utilization grid differs from layout".into()));
    }
    let mut img = base.clone();
    for (s, v) in u.segments() {
        if v > 0.0 {
            img.fill_rect(layout.segment_strip(s), &scheme.gradient(v));
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedHeatmap {
    pub utilization: ChannelUtilization,
    /// Distance of each strip's mean colour from its decoded colour.
    pub residual: ChannelUtilization,
}

/// Projects each strip's mean colour onto the gradient line. Strips closer
/// to white than to the line decode to 0.
pub fn decode_heatmap(img: &ImagePlane, layout: &RasterLayout, scheme: &ColorScheme) -> Result<DecodedHeatmap, RasterError> {
    layout.check_image(img, 3)?;
    let mut util = ChannelUtilization::zeros(layout.cols, layout.rows);
    let mut residual = util.clone();
    let (a, b) = (scheme.gradient_low, scheme.gradient_high);
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    for s in layout.segments() {
        let r = layout.segment_strip(s);
        let mut m = [0.0f64; 3];
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                let p = img.pixel(x, y);
                for c in 0..3 {
                    m[c] += p[c] as f64;
                }
            }
        }
        let n = r.area() as f64;
        let mean = [(m[0] / n) as f32, (m[1] / n) as f32, (m[2] / n) as f32];
        let t = ((mean[0] - a[0]) * d[0] + (mean[1] - a[1]) * d[1] + (mean[2] - a[2]) * d[2]) / dd;
        let t = t.clamp(0.0, 1.0);
        let on_line = rgb_distance(mean, scheme.gradient(t));
        let off_white = rgb_distance(mean, scheme.white);
        if off_white < on_line {
            residual.set(s, off_white);
        } else {
            util.set(s, t);
            residual.set(s, on_line);
        }
    }
    Ok(DecodedHeatmap { utilization: util, residual })
}

/// `[R, G, B, lambda * connect]`, clamped to [0, 1].
pub fn stack_input(place: &ImagePlane, connect: &ImagePlane, lambda: f32) -> Result<ImagePlane, RasterError> {
    if place.channels != 3 || connect.channels != 1 {
        return Err(RasterError::DimMismatch("expects 3-channel placement and 1-channel connectivity".into()));
    }
    if place.height != connect.height || place.width != connect.width {
        return Err(RasterError::DimMismatch(format!(
            "{}x{} vs {}x{}",
            place.height, place.width, connect.height, connect.width
        )));
    }
    let mut data = Vec::with_capacity(place.data.len() / 3 * 4);
    for (rgb, &c) in place.data.chunks_exact(3).zip(&connect.data) {
        data.extend_from_slice(rgb);
        data.push((lambda * c).clamp(0.0, 1.0));
    }
    ImagePlane::from_vec(place.height, place.width, 4, data)
}

pub fn to_grayscale(img: &ImagePlane) -> Result<ImagePlane, RasterError> {
    if img.channels != 3 {
        return Err(RasterError::Channels(img.channels));
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
        .collect();
    ImagePlane::from_vec(img.height, img.width, 1, data)
}

/// Grayscale to three identical channels.
pub fn gray_to_rgb(img: &ImagePlane) -> Result<ImagePlane, RasterError> {
    if img.channels != 1 {
        return Err(RasterError::Channels(img.channels));
    }
    let data = img.data.iter().flat_map(|&v| [v, v, v]).collect();
    ImagePlane::from_vec(img.height, img.width, 3, data)
}

pub fn encode_png(img: &ImagePlane) -> Result<Vec<u8>, RasterError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(match img.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            _ => png::ColorType::Rgba,
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| RasterError::Png(e.to_string()))?;
        let bytes: Vec<u8> = img.data.iter().map(|&v| (v * 255.0).round() as u8).collect();
        w.write_image_data(&bytes).map_err(|e| RasterError::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn write_png(path: &Path, img: &ImagePlane) -> Result<(), RasterError> {
    let bytes = encode_png(img)?;
    let f = std::fs::File::create(path)?;
    std::io::Write::write_all(&mut BufWriter::new(f), &bytes)?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<ImagePlane, RasterError> {
    let f = std::fs::File::open(path)?;
    decode_png(BufReader::new(f))
}

pub fn decode_png(r: impl std::io::Read) -> Result<ImagePlane, RasterError> {
    let mut dec = png::Decoder::new(r);
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| RasterError::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| RasterError::Png(e.to_string()))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(RasterError::Png(format!("unsupported colour type {other:?}"))),
    };
    let data = buf[..info.buffer_size()].iter().map(|&b| b as f32 / 255.0).collect();
    ImagePlane::from_vec(info.height as usize, info.width as usize, channels, data)
}
