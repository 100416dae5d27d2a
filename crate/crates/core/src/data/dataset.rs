use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::Aug;
use super::image::{load_png, save_png, ImageBuffer};
use super::resize::{reflect, resize_image};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// One HR image and its bicubic LR counterpart, both in unit range.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub hr: Tensor4<f32>,
    pub lr: Tensor4<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub patch: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            patch: 72,
            batch_size: 32,
            seed: 0,
            augment: true,
        }
    }
}

/// Where a batch member came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub id: String,
    /// LR crop offset; the HR offset is this times the scale.
    pub x: usize,
    pub y: usize,
    pub aug: Aug,
}

#[derive(Clone, Debug)]
pub struct PairBatch {
    pub lr: Tensor4<f32>,
    pub hr: Tensor4<f32>,
    pub provenance: Vec<Provenance>,
}

/// Crops `(y, x, h, w)` out of image `n` of `t`.
pub fn crop(t: &Tensor4<f32>, n: usize, y: usize, x: usize, h: usize, w: usize) -> Result<Tensor4<f32>> {
    let s = t.shape();
    if y + h > s.h || x + w > s.w {
        return Err(Error::Config(format!(
            "crop {w}x{h} at ({x}, {y}) exceeds {}x{}",
            s.w, s.h
        )));
    }
    let mut out = Tensor4::zeros(Shape4::new(1, s.c, h, w));
    for c in 0..s.c {
        let src = t.plane(n, c);
        let dst = out.plane_mut(0, c);
        for r in 0..h {
            let row = (y + r) * s.w + x;
            dst[r * w..(r + 1) * w].copy_from_slice(&src[row..row + w]);
        }
    }
    Ok(out)
}

/// Aligned random crop: LR `p×p` at `(x, y)`, HR `pr×pr` at `(rx, ry)`.
pub fn sample_patch<R: Rng + ?Sized>(
    hr: &Tensor4<f32>,
    lr: &Tensor4<f32>,
    p: usize,
    r: usize,
    rng: &mut R,
) -> Result<(Tensor4<f32>, Tensor4<f32>, usize, usize)> {
    let (ls, hs) = (lr.shape(), hr.shape());
    if ls.h < p || ls.w < p {
        return Err(Error::Dataset(format!("LR image {}x{} smaller than patch {p}", ls.w, ls.h)));
    }
    if hs.h < ls.h * r || hs.w < ls.w * r {
        return Err(Error::Dataset(format!(
            "HR image {}x{} does not cover LR {}x{} at x{r}",
            hs.w, hs.h, ls.w, ls.h
        )));
    }
    let x = rng.gen_range(0..=ls.w - p);
    let y = rng.gen_range(0..=ls.h - p);
    let lr_patch = crop(lr, 0, y, x, p, p)?;
    let hr_patch = crop(hr, 0, y * r, x * r, p * r, p * r)?;
    Ok((lr_patch, hr_patch, x, y))
}

fn mod_crop(img: &ImageBuffer, r: usize) -> Result<ImageBuffer> {
    let (w, h) = (img.width() - img.width() % r, img.height() - img.height() % r);
    if w == 0 || h == 0 {
        return Err(Error::Dataset(format!(
            "image {}x{} smaller than scale {r}",
            img.width(),
            img.height()
        )));
    }
    let mut out = ImageBuffer::filled(w, h, [0; 3])?;
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, img.get(x, y));
        }
    }
    Ok(out)
}

fn reflect_pad(img: &ImageBuffer, w: usize, h: usize) -> Result<ImageBuffer> {
    let mut out = ImageBuffer::filled(w, h, [0; 3])?;
    for y in 0..h {
        for x in 0..w {
            let sx = reflect(x as isize, img.width());
            let sy = reflect(y as isize, img.height());
            out.set(x, y, img.get(sx, sy));
        }
    }
    Ok(out)
}

/// Mod-crops `hr` to a multiple of `r` and reflect-pads it so the LR side is
/// at least `patch` in each extent.
pub fn prepare_hr(id: &str, hr: &ImageBuffer, r: usize, patch: usize) -> Result<ImageBuffer> {
    let hr = mod_crop(hr, r)?;
    let min = patch * r;
    if hr.width() < min || hr.height() < min {
        log::warn!(
            "{id}: {}x{} is smaller than {min}x{min} at x{r}; reflect-padding",
            hr.width(),
            hr.height()
        );
        return reflect_pad(&hr, hr.width().max(min), hr.height().max(min));
    }
    Ok(hr)
}

pub fn downsample(hr: &ImageBuffer, r: usize) -> Result<ImageBuffer> {
    resize_image(hr, hr.width() / r, hr.height() / r)
}

#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Vec<Sample>,
    scale: usize,
}

impl Dataset {
    /// Builds pairs in memory; LR images are bicubic downsamples quantized to 8 bits.
    pub fn from_images(images: Vec<(String, ImageBuffer)>, scale: usize, patch: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Dataset("no images".into()));
        }
        let samples = images
            .into_iter()
            .map(|(id, img)| {
                let hr = prepare_hr(&id, &img, scale, patch)?;
                let lr = downsample(&hr, scale)?;
                Ok(Sample {
                    id,
                    hr: hr.to_tensor(),
                    lr: lr.to_tensor(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { samples, scale })
    }

    /// Loads `<root>/HR/*.png`, caching LR images under `<root>/LR_bicubic/X{scale}/`.
    pub fn from_dir(root: impl AsRef<Path>, scale: usize, patch: usize) -> Result<Self> {
        let root = root.as_ref();
        let files = list_pngs(&root.join("HR"))?;
        if files.is_empty() {
            return Err(Error::Dataset(format!("no PNG files in {}", root.join("HR").display())));
        }
        let cache = root.join("LR_bicubic").join(format!("X{scale}"));
        std::fs::create_dir_all(&cache).map_err(|e| Error::io(&cache, e))?;
        let mut samples = Vec::with_capacity(files.len());
        for path in files {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let hr = prepare_hr(&id, &load_png(&path)?, scale, patch)?;
            let (lw, lh) = (hr.width() / scale, hr.height() / scale);
            let cached = cache.join(format!("{id}.png"));
            let lr = match cached.exists().then(|| load_png(&cached)) {
                Some(Ok(lr)) if lr.width() == lw && lr.height() == lh => lr,
                _ => {
                    let lr = downsample(&hr, scale)?;
                    save_png(&lr, &cached)?;
                    lr
                }
            };
            samples.push(Sample {
                id,
                hr: hr.to_tensor(),
                lr: lr.to_tensor(),
            });
        }
        Ok(Dataset { samples, scale })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Visiting order for `epoch`.
    fn permutation(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut rng = stream_rng(seed, 1, epoch);
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Batch number `index` of the stream defined by `cfg`. Every batch is a
    /// pure function of `(cfg, index)`.
    pub fn batch(&self, cfg: &BatchConfig, index: u64) -> Result<PairBatch> {
        let (p, r, bs) = (cfg.patch, self.scale, cfg.batch_size);
        if bs == 0 || p == 0 {
            return Err(Error::Config("batch size and patch must be positive".into()));
        }
        let n = self.len() as u64;
        let mut lr = Tensor4::zeros(Shape4::new(bs, 3, p, p));
        let mut hr = Tensor4::zeros(Shape4::new(bs, 3, p * r, p * r));
        let mut provenance = Vec::with_capacity(bs);
        let mut order: Option<(u64, Vec<usize>)> = None;
        for i in 0..bs {
            let k = index * bs as u64 + i as u64;
            let epoch = k / n;
            if order.as_ref().map(|o| o.0) != Some(epoch) {
                order = Some((epoch, self.permutation(cfg.seed, epoch)));
            }
            let sample = &self.samples[order.as_ref().unwrap().1[(k % n) as usize]];
            let mut rng = stream_rng(cfg.seed, 2, k);
            let (mut l, mut h, x, y) = sample_patch(&sample.hr, &sample.lr, p, r, &mut rng)?;
            let aug = if cfg.augment {
                Aug::random(&mut rng)
            } else {
                Aug::IDENTITY
            };
            if aug != Aug::IDENTITY {
                l = aug.apply(&l)?;
                h = aug.apply(&h)?;
            }
            let (lp, hp) = (l.numel(), h.numel());
            lr.data_mut()[i * lp..(i + 1) * lp].copy_from_slice(l.data());
            hr.data_mut()[i * hp..(i + 1) * hp].copy_from_slice(h.data());
            provenance.push(Provenance {
                id: sample.id.clone(),
                x,
                y,
                aug,
            });
        }
        Ok(PairBatch { lr, hr, provenance })
    }

    /// Centered `p×p` crops of up to `max` images, without augmentation.
    pub fn center_batch(&self, p: usize, max: usize) -> Result<PairBatch> {
        let r = self.scale;
        let take = self.len().min(max.max(1));
        let mut lr = Tensor4::zeros(Shape4::new(take, 3, p, p));
        let mut hr = Tensor4::zeros(Shape4::new(take, 3, p * r, p * r));
        let mut provenance = Vec::with_capacity(take);
        for (i, s) in self.samples.iter().take(take).enumerate() {
            let ls = s.lr.shape();
            if ls.h < p || ls.w < p {
                return Err(Error::Dataset(format!("{}: smaller than patch {p}", s.id)));
            }
            let (x, y) = ((ls.w - p) / 2, (ls.h - p) / 2);
            let l = crop(&s.lr, 0, y, x, p, p)?;
            let h = crop(&s.hr, 0, y * r, x * r, p * r, p * r)?;
            let (lp, hp) = (l.numel(), h.numel());
            lr.data_mut()[i * lp..(i + 1) * lp].copy_from_slice(l.data());
            hr.data_mut()[i * hp..(i + 1) * hp].copy_from_slice(h.data());
            provenance.push(Provenance {
                id: s.id.clone(),
                x,
                y,
                aug: Aug::IDENTITY,
            });
        }
        Ok(PairBatch { lr, hr, provenance })
    }
}

fn stream_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// PNG files directly inside `dir`, sorted by path.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("png"))
            .unwrap_or(false);
        if path.is_file() && is_png {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Infinite batch stream starting at batch `start`.
pub struct Batches {
    dataset: Arc<Dataset>,
    cfg: BatchConfig,
    next: u64,
}

impl Batches {
    pub fn new(dataset: Arc<Dataset>, cfg: BatchConfig, start: u64) -> Self {
        Batches {
            dataset,
            cfg,
            next: start,
        }
    }
}

impl Iterator for Batches {
    type Item = Result<PairBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        let b = self.dataset.batch(&self.cfg, self.next);
        self.next += 1;
        Some(b)
    }
}

pub fn make_batches(root: impl AsRef<Path>, scale: usize, cfg: BatchConfig) -> Result<Batches> {
    let ds = Dataset::from_dir(root, scale, cfg.patch)?;
    Ok(Batches::new(Arc::new(ds), cfg, 0))
}

/// Produces batches on a worker thread through a bounded queue. The stream is
/// identical to [`Batches`] with the same arguments.
pub struct Prefetcher {
    rx: Option<Receiver<Result<PairBatch>>>,
    worker: Option<JoinHandle<()>>,
}

impl Prefetcher {
    pub fn spawn(dataset: Arc<Dataset>, cfg: BatchConfig, start: u64, capacity: usize) -> Self {
        let (tx, rx) = sync_channel(capacity.max(1));
        let worker = std::thread::spawn(move || {
            for b in Batches::new(dataset, cfg, start) {
                if tx.send(b).is_err() {
                    break;
                }
            }
        });
        Prefetcher {
            rx: Some(rx),
            worker: Some(worker),
        }
    }
}

impl Iterator for Prefetcher {
    type Item = Result<PairBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl Drop for Prefetcher {
    fn drop(&mut self) {
        // closing the receiver unblocks the worker
        self.rx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
