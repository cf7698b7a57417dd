//! Image-pair ingestion, normalization, sliding-window patches and the
//! patch manifest.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageReader};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FusionError, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

pub const PATCH_SIZE: usize = 128;
pub const PATCH_STRIDE: usize = 12;
pub const MANIFEST_VERSION: u32 = 1;
/// Name of the shuffle algorithm written into manifests.
pub const SHUFFLE_PRNG: &str = "chacha8-fisher-yates-v1";

/// 8-bit single-channel raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(FusionError::dim(format!(
                "raster {width}x{height} needs {} bytes, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, v: u8) -> Self {
        Self {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    /// `f(row, col)` per pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.height, self.width, |i, j| self.get(j, i))
    }

    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Self> {
        if row + h > self.height || col + w > self.width {
            return Err(FusionError::dim(format!(
                "crop {h}x{w} at ({row},{col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(w, h, |i, j| self.get(row + i, col + j)))
    }

    /// Normalized `1×1×H×W` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::lit(normalize(v))).collect();
        Tensor::from_vec([1, 1, self.height, self.width], data).expect("raster size")
    }

    /// Denormalizes item `n` of a single-channel batch.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let [b, c, h, w] = t.shape();
        if c != 1 || n >= b {
            return Err(FusionError::dim(format!(
                "cannot take image {n} of a {:?} tensor",
                t.shape()
            )));
        }
        let data = t.item(n).iter().map(|v| denormalize(v.as_f64())).collect();
        Self::new(w, h, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer size matches");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| FusionError::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// `x/127.5 − 1`.
pub fn normalize(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// `round((x+1)·127.5)` clamped to `[0, 255]`; NaN maps to 0.
pub fn denormalize(x: f64) -> u8 {
    let v = ((x + 1.0) * 127.5).round();
    if v.is_nan() {
        0
    } else {
        v.clamp(0.0, 255.0) as u8
    }
}

fn bt601(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

fn to_raster(img: DynamicImage, path: &Path) -> Result<Raster> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p.0[0]).collect(),
        DynamicImage::ImageRgb8(b) => b.pixels().map(|p| bt601(p.0[0], p.0[1], p.0[2])).collect(),
        DynamicImage::ImageRgba8(b) => b.pixels().map(|p| bt601(p.0[0], p.0[1], p.0[2])).collect(),
        other => {
            return Err(FusionError::UnsupportedImage {
                path: path.to_path_buf(),
                reason: format!("{:?} is not an 8-bit format", other.color()),
            })
        }
    };
    Raster::new(w, h, data)
}

/// Decodes a PNG/BMP/TIFF file to 8-bit gray; RGB goes through BT.601 luma.
pub fn load_raster(path: &Path) -> Result<Raster> {
    let reader = ImageReader::open(path)
        .map_err(|e| FusionError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| FusionError::io(path, e))?;
    let img = reader.decode().map_err(|source| FusionError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    to_raster(img, path)
}

/// Co-registered infrared/visible pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImagePair {
    pub identifier: String,
    pub ir: Raster,
    pub vis: Raster,
}

impl ImagePair {
    pub fn new(identifier: impl Into<String>, ir: Raster, vis: Raster) -> Result<Self> {
        if ir.width != vis.width || ir.height != vis.height {
            return Err(FusionError::Registration {
                ir_w: ir.width,
                ir_h: ir.height,
                vis_w: vis.width,
                vis_h: vis.height,
            });
        }
        Ok(Self {
            identifier: identifier.into(),
            ir,
            vis,
        })
    }

    pub fn height(&self) -> usize {
        self.ir.height
    }

    pub fn width(&self) -> usize {
        self.ir.width
    }

    /// Normalized `(ir, vis)` tensors in `[-1, 1]`.
    pub fn normalized<T: Real>(&self) -> (Tensor<T>, Tensor<T>) {
        (self.ir.to_tensor(), self.vis.to_tensor())
    }
}

pub fn load_pair(path_ir: &Path, path_vis: &Path) -> Result<ImagePair> {
    let ir = load_raster(path_ir)?;
    let vis = load_raster(path_vis)?;
    let id = path_ir
        .file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.strip_suffix("_ir").unwrap_or(s).to_string())
        .unwrap_or_default();
    ImagePair::new(id, ir, vis)
}

/// Offsets of every full window on the stride lattice, row-major.
pub fn patch_offsets(height: usize, width: usize, size: usize, stride: usize) -> Vec<(usize, usize)> {
    if height < size || width < size || size == 0 || stride == 0 {
        return Vec::new();
    }
    let rows = (height - size) / stride + 1;
    let cols = (width - size) / stride + 1;
    (0..rows)
        .flat_map(|a| (0..cols).map(move |b| (a * stride, b * stride)))
        .collect()
}

pub fn patch_count(height: usize, width: usize, size: usize, stride: usize) -> usize {
    if height < size || width < size || size == 0 || stride == 0 {
        0
    } else {
        ((height - size) / stride + 1) * ((width - size) / stride + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchRecord {
    /// Index into [`PatchSet::sources`].
    pub source: usize,
    pub row: usize,
    pub col: usize,
}

/// Patches stored as windows into their source pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchSet {
    pub size: usize,
    pub stride: usize,
    pub seed: Option<u64>,
    pub sources: Vec<ImagePair>,
    pub records: Vec<PatchRecord>,
    pub warnings: Vec<String>,
}

impl PatchSet {
    pub fn empty(size: usize, stride: usize) -> Self {
        Self {
            size,
            stride,
            seed: None,
            sources: Vec::new(),
            records: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends every window of `pair`; a pair smaller than the window is
    /// skipped and noted in `warnings`.
    pub fn push_pair(&mut self, pair: ImagePair) {
        let offsets = patch_offsets(pair.height(), pair.width(), self.size, self.stride);
        if offsets.is_empty() {
            self.warnings.push(format!(
                "skipped {}: {}x{} is smaller than the {}x{} patch",
                pair.identifier,
                pair.width(),
                pair.height(),
                self.size,
                self.size
            ));
            return;
        }
        let source = self.sources.len();
        self.sources.push(pair);
        self.records
            .extend(offsets.into_iter().map(|(row, col)| PatchRecord { source, row, col }));
    }

    pub fn identifier(&self, i: usize) -> &str {
        &self.sources[self.records[i].source].identifier
    }

    /// Crops patch `i` out of its source pair.
    pub fn patch(&self, i: usize) -> Result<(Raster, Raster)> {
        let r = self.records[i];
        let p = &self.sources[r.source];
        Ok((
            p.ir.crop(r.row, r.col, self.size, self.size)?,
            p.vis.crop(r.row, r.col, self.size, self.size)?,
        ))
    }

    /// Normalized `N×1×S×S` IR and VIS batches for `indices`.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        let s = self.size;
        let mut ir = Tensor::zeros([indices.len(), 1, s, s]);
        let mut vis = Tensor::zeros([indices.len(), 1, s, s]);
        for (n, &i) in indices.iter().enumerate() {
            let r = *self
                .records
                .get(i)
                .ok_or_else(|| FusionError::Data(format!("patch index {i} out of range")))?;
            let p = &self.sources[r.source];
            for (dst, src) in [(&mut ir, &p.ir), (&mut vis, &p.vis)] {
                let item = dst.item_mut(n);
                for a in 0..s {
                    for b in 0..s {
                        item[a * s + b] = T::lit(normalize(src.get(r.row + a, r.col + b)));
                    }
                }
            }
        }
        Ok((ir, vis))
    }

    /// Reorders the records with the manifest shuffle.
    pub fn shuffle(&mut self, seed: u64) {
        let order = shuffled_indices(self.records.len(), seed, 0);
        self.records = order.into_iter().map(|i| self.records[i]).collect();
        self.seed = Some(seed);
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: MANIFEST_VERSION,
            size: self.size,
            stride: self.stride,
            seed: self.seed,
            prng: SHUFFLE_PRNG.to_string(),
            records: self
                .records
                .iter()
                .map(|r| (self.sources[r.source].identifier.clone(), r.row, r.col))
                .collect(),
            warnings: self.warnings.clone(),
        }
    }

    /// Rebuilds a set from a manifest and the pairs it names.
    pub fn from_manifest(manifest: &Manifest, pairs: Vec<ImagePair>) -> Result<Self> {
        let index: HashMap<String, usize> = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| (p.identifier.clone(), i))
            .collect();
        let mut records = Vec::with_capacity(manifest.records.len());
        for (id, row, col) in &manifest.records {
            let &source = index
                .get(id)
                .ok_or_else(|| FusionError::Data(format!("manifest names unknown pair `{id}`")))?;
            let p = &pairs[source];
            if row % manifest.stride != 0
                || col % manifest.stride != 0
                || row + manifest.size > p.height()
                || col + manifest.size > p.width()
            {
                return Err(FusionError::Data(format!(
                    "offset ({row},{col}) of `{id}` is off-lattice or out of bounds"
                )));
            }
            records.push(PatchRecord {
                source,
                row: *row,
                col: *col,
            });
        }
        Ok(Self {
            size: manifest.size,
            stride: manifest.stride,
            seed: manifest.seed,
            sources: pairs,
            records,
            warnings: manifest.warnings.clone(),
        })
    }
}

/// One pair's patches.
pub fn extract_patches(pair: ImagePair, size: usize, stride: usize) -> PatchSet {
    let mut set = PatchSet::empty(size, stride);
    set.push_pair(pair);
    set
}

/// Fisher–Yates over `0..n` driven by ChaCha8 (`seed`, `stream`):
/// for `i = n−1..1`, swap `i` with `next_u64() mod (i+1)`.
pub fn shuffled_indices(n: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut v: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        v.swap(i, j);
    }
    v
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub format_version: u32,
    pub size: usize,
    pub stride: usize,
    pub seed: Option<u64>,
    pub prng: String,
    pub records: Vec<(String, usize, usize)>,
    pub warnings: Vec<String>,
}

const RECORD_HEADER: &str = "identifier,row_offset,col_offset";

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# icafusion patch manifest").unwrap();
        writeln!(s, "format_version={}", self.format_version).unwrap();
        writeln!(s, "size={}", self.size).unwrap();
        writeln!(s, "stride={}", self.stride).unwrap();
        match self.seed {
            Some(seed) => writeln!(s, "seed={seed}").unwrap(),
            None => writeln!(s, "seed=none").unwrap(),
        }
        writeln!(s, "prng={}", self.prng).unwrap();
        for w in &self.warnings {
            writeln!(s, "warning={}", w.replace('\n', " ")).unwrap();
        }
        writeln!(s, "{RECORD_HEADER}").unwrap();
        for (id, r, c) in &self.records {
            writeln!(s, "{id},{r},{c}").unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| FusionError::Data(format!("manifest: {m}"));
        let mut header: BTreeMap<&str, &str> = BTreeMap::new();
        let mut warnings = Vec::new();
        let mut lines = text.lines();
        for line in lines.by_ref() {
            if line == RECORD_HEADER {
                break;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header line `{line}`")))?;
            if k == "warning" {
                warnings.push(v.to_string());
            } else {
                header.insert(k, v);
            }
        }
        let field = |k: &str| header.get(k).copied().ok_or_else(|| bad(format!("missing `{k}`")));
        let num = |k: &str| -> Result<usize> {
            field(k)?
                .parse()
                .map_err(|_| bad(format!("`{k}` is not an integer")))
        };
        let format_version: u32 = field("format_version")?
            .parse()
            .map_err(|_| bad("bad format_version".into()))?;
        if format_version != MANIFEST_VERSION {
            return Err(bad(format!(
                "format version {format_version} is not supported (expected {MANIFEST_VERSION})"
            )));
        }
        let seed = match field("seed")? {
            "none" => None,
            s => Some(s.parse().map_err(|_| bad("bad seed".into()))?),
        };
        let mut records = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.rsplitn(3, ',');
            let (c, r, id) = match (it.next(), it.next(), it.next()) {
                (Some(c), Some(r), Some(id)) => (c, r, id),
                _ => return Err(bad(format!("malformed record `{line}`"))),
            };
            let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| bad(format!("bad offset in `{line}`")));
            records.push((id.to_string(), parse(r)?, parse(c)?));
        }
        Ok(Self {
            format_version,
            size: num("size")?,
            stride: num("stride")?,
            seed,
            prng: field("prng")?.to_string(),
            records,
            warnings,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| FusionError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| FusionError::io(path, e))?)
    }
}

/// Extensions recognised as images, compared case-insensitively.
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "bmp", "tif", "tiff"];

/// `<id>_ir.*` / `<id>_vis.*` files found in a directory.
#[derive(Clone, Debug, Default)]
pub struct PairListing {
    pub pairs: Vec<(String, PathBuf, PathBuf)>,
    pub unpaired: Vec<PathBuf>,
}

pub fn list_pairs(dir: &Path) -> Result<PairListing> {
    let entries = fs::read_dir(dir).map_err(|e| FusionError::io(dir, e))?;
    let mut ir: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut vis: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut listing = PairListing::default();
    for entry in entries {
        let path = entry.map_err(|e| FusionError::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let ext_ok = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        match (ext_ok, stem.strip_suffix("_ir"), stem.strip_suffix("_vis")) {
            (true, Some(id), _) => {
                ir.insert(id.to_string(), path);
            }
            (true, _, Some(id)) => {
                vis.insert(id.to_string(), path);
            }
            _ => listing.unpaired.push(path),
        }
    }
    for (id, p) in ir {
        match vis.remove(&id) {
            Some(v) => listing.pairs.push((id, p, v)),
            None => listing.unpaired.push(p),
        }
    }
    listing.unpaired.extend(vis.into_values());
    listing.unpaired.sort();
    Ok(listing)
}

/// Loads every pair in `dir` (decoded in parallel), extracts patches and
/// shuffles them with `seed`.
pub fn build_dataset(dir: &Path, size: usize, stride: usize, seed: u64) -> Result<PatchSet> {
    let listing = list_pairs(dir)?;
    let loaded = par::map_slice(&listing.pairs, |(id, ir, vis)| {
        let mut p = load_pair(ir, vis)?;
        p.identifier = id.clone();
        Ok::<_, FusionError>(p)
    });
    let mut set = PatchSet::empty(size, stride);
    for p in &listing.unpaired {
        set.warnings.push(format!("unpaired file {}", p.display()));
    }
    for pair in loaded {
        set.push_pair(pair?);
    }
    set.shuffle(seed);
    Ok(set)
}
