//! Labeled example generation and the on-disk dataset container.

use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use num_complex::{Complex32, Complex64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::channel::apply_awgn;
use super::modulation::{map_symbols, ModulationClass, NUM_CLASSES};
use super::pulse::{design_rrc, matched_filter_downsample, pulse_shape, PulseShapeConfig};
use crate::digest::{mix64, sha256_hex};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 5] = b"JEAMC";
pub const DATASET_VERSION: u16 = 1;

/// One labeled example of matched-filter received symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalExample {
    pub symbols: Vec<Complex32>,
    pub label: ModulationClass,
    pub snr_db: i32,
    pub seed: u64,
}

impl SignalExample {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub examples_per_snr_per_class: usize,
    pub snr_min_db: i32,
    pub snr_max_db: i32,
    pub signal_length: usize,
    pub pulse: PulseShapeConfig,
    pub master_seed: u64,
}

impl DatasetSpec {
    pub fn snr_range(&self) -> RangeInclusive<i32> {
        self.snr_min_db..=self.snr_max_db
    }

    pub fn snrs(&self) -> Vec<i32> {
        self.snr_range().collect()
    }

    pub fn total_examples(&self) -> usize {
        NUM_CLASSES * self.snrs().len() * self.examples_per_snr_per_class
    }

    pub fn validate(&self) -> Result<()> {
        self.pulse.validate()?;
        if self.signal_length == 0 {
            return Err(Error::Config("signal_length must be positive".into()));
        }
        if self.snr_min_db > self.snr_max_db {
            return Err(Error::Config(format!(
                "empty SNR range [{}, {}]",
                self.snr_min_db, self.snr_max_db
            )));
        }
        if self.snr_min_db < i8::MIN as i32 || self.snr_max_db > i8::MAX as i32 {
            return Err(Error::Config("SNR values must fit in a signed byte".into()));
        }
        if self.examples_per_snr_per_class == 0 {
            return Err(Error::Config("examples_per_snr_per_class must be positive".into()));
        }
        if self.signal_length > u32::MAX as usize || self.total_examples() > u32::MAX as usize {
            return Err(Error::Config("dataset too large for the file format".into()));
        }
        Ok(())
    }
}

/// Seed for example `index` of `(class, snr_db)`, independent of generation order.
pub fn example_seed(master_seed: u64, class: ModulationClass, snr_db: i32, index: u64) -> u64 {
    let mut s = mix64(master_seed);
    s = mix64(s ^ class.index() as u64);
    s = mix64(s ^ (snr_db as i64 as u64));
    mix64(s ^ index)
}

/// Generates one example. `span_symbols` guard symbols are added and the
/// centre `signal_length` received symbols are kept, so no retained symbol
/// sees the filter edge transient.
pub fn generate_example(
    class: ModulationClass,
    snr_db: i32,
    signal_length: usize,
    pulse: &PulseShapeConfig,
    taps: &[f64],
    seed: u64,
) -> Result<SignalExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let guard = pulse.span_symbols;
    let total = signal_length + guard;
    let sps = pulse.samples_per_symbol;
    let symbols = map_symbols(class, total, &mut rng);
    let tx = pulse_shape(&symbols, taps, sps)?;
    let noisy = apply_awgn(&tx, snr_db as f64, &mut rng);
    let rx = matched_filter_downsample(&noisy, taps, sps, total)?;
    let start = guard / 2;
    let symbols = rx[start..start + signal_length]
        .iter()
        .map(|z: &Complex64| Complex32::new(z.re as f32, z.im as f32))
        .collect();
    Ok(SignalExample { symbols, label: class, snr_db, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u16,
    pub signal_length: usize,
    pub snrs: Vec<i32>,
    pub classes: Vec<ModulationClass>,
    pub example_count: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub examples: Vec<SignalExample>,
}

/// Human-readable sidecar written next to every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub header: DatasetHeader,
    pub spec: Option<DatasetSpec>,
    pub sha256: String,
    pub bytes: usize,
}

/// Builds every `(class, snr, index)` example in class-major order.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let taps = design_rrc(&spec.pulse)?;
    let snrs = spec.snrs();
    let mut jobs = Vec::with_capacity(spec.total_examples());
    for class in ModulationClass::ALL {
        for &snr in &snrs {
            for index in 0..spec.examples_per_snr_per_class as u64 {
                jobs.push((class, snr, example_seed(spec.master_seed, class, snr, index)));
            }
        }
    }
    let examples = jobs
        .par_iter()
        .map(|&(class, snr, seed)| generate_example(class, snr, spec.signal_length, &spec.pulse, &taps, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            version: DATASET_VERSION,
            signal_length: spec.signal_length,
            snrs,
            classes: ModulationClass::ALL.to_vec(),
            example_count: examples.len(),
            master_seed: spec.master_seed,
        },
        examples,
    })
}

impl Dataset {
    pub fn signal_length(&self) -> usize {
        self.header.signal_length
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let record = 2 + 8 + 8 * h.signal_length;
        let mut buf = Vec::with_capacity(64 + record * self.examples.len());
        buf.extend_from_slice(DATASET_MAGIC);
        buf.extend_from_slice(&h.version.to_le_bytes());
        buf.extend_from_slice(&(h.signal_length as u32).to_le_bytes());
        buf.extend_from_slice(&(h.snrs.len() as u16).to_le_bytes());
        buf.extend(h.snrs.iter().map(|&s| s as i8 as u8));
        buf.push(h.classes.len() as u8);
        buf.extend(h.classes.iter().map(|c| c.index() as u8));
        buf.extend_from_slice(&(self.examples.len() as u32).to_le_bytes());
        buf.extend_from_slice(&h.master_seed.to_le_bytes());
        for ex in &self.examples {
            buf.push(ex.label.index() as u8);
            buf.push(ex.snr_db as i8 as u8);
            buf.extend_from_slice(&ex.seed.to_le_bytes());
            for z in &ex.symbols {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5)? != DATASET_MAGIC {
            return Err(Error::Format("bad dataset magic".into()));
        }
        let version = r.u16()?;
        if version != DATASET_VERSION {
            return Err(Error::Version { found: version, expected: DATASET_VERSION });
        }
        let signal_length = r.u32()? as usize;
        let n_snr = r.u16()? as usize;
        let snrs = r.take(n_snr)?.iter().map(|&b| b as i8 as i32).collect();
        let n_class = r.u8()? as usize;
        let classes = r
            .take(n_class)?
            .iter()
            .map(|&b| class_from_byte(b))
            .collect::<Result<Vec<_>>>()?;
        let example_count = r.u32()? as usize;
        let master_seed = r.u64()?;
        let record = 2 + 8 + 8 * signal_length;
        if bytes.len() - r.pos != record * example_count {
            return Err(Error::Format(format!(
                "expected {} record bytes, found {}",
                record * example_count,
                bytes.len() - r.pos
            )));
        }
        let mut examples = Vec::with_capacity(example_count);
        for _ in 0..example_count {
            let label = class_from_byte(r.u8()?)?;
            let snr_db = r.u8()? as i8 as i32;
            let seed = r.u64()?;
            let mut symbols = Vec::with_capacity(signal_length);
            for _ in 0..signal_length {
                let re = r.f32()?;
                let im = r.f32()?;
                symbols.push(Complex32::new(re, im));
            }
            examples.push(SignalExample { symbols, label, snr_db, seed });
        }
        Ok(Dataset {
            header: DatasetHeader { version, signal_length, snrs, classes, example_count, master_seed },
            examples,
        })
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    /// Writes the binary container and its `.json` manifest. Refuses to
    /// replace an existing file unless `overwrite` is set.
    pub fn write(&self, path: &Path, spec: Option<&DatasetSpec>, overwrite: bool) -> Result<DatasetManifest> {
        if path.exists() && !overwrite {
            return Err(Error::AlreadyExists(path.to_path_buf()));
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let bytes = self.to_bytes();
        let manifest = DatasetManifest {
            format: "JEAMC dataset".into(),
            header: self.header.clone(),
            spec: spec.cloned(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len(),
        };
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::write(manifest_path(path), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Examples of a single class, in file order.
    pub fn filter<F: Fn(&SignalExample) -> bool>(&self, keep: F) -> Vec<&SignalExample> {
        self.examples.iter().filter(|e| keep(e)).collect()
    }
}

/// Generates a dataset and writes it to `path`.
pub fn generate_dataset_file(spec: &DatasetSpec, path: &Path, overwrite: bool) -> Result<DatasetManifest> {
    if path.exists() && !overwrite {
        return Err(Error::AlreadyExists(path.to_path_buf()));
    }
    generate_dataset(spec)?.write(path, Some(spec), overwrite)
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn class_from_byte(b: u8) -> Result<ModulationClass> {
    ModulationClass::from_index(b as usize).ok_or_else(|| Error::Format(format!("bad class byte {b}")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format("unexpected end of file".into())),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
