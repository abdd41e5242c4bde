//! Flat parameter storage with named layer views, seeded initialization,
//! and the binary checkpoint format.
//!
//! Checkpoint layout: magic `HGDF`, version u32, config JSON (u64 length +
//! bytes), parameter count u64, little-endian doubles, then an optional
//! optimizer trailer (flag byte, epoch u64, step u64, first and second
//! moments). A JSON config sidecar is written next to the binary file.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayView2, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::NetworkConfig;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HGDF";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One named parameter tensor inside the flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub has_bias: bool,
    /// Zero-initialized (the adaptive-norm modulation tables); everything
    /// else uses fan-in-scaled uniform init.
    pub zero_init: bool,
}

impl LayerSpec {
    pub fn weight_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn total_len(&self) -> usize {
        self.weight_len() + if self.has_bias { self.cols } else { 0 }
    }
}

/// Deterministic layer table derived from a [`NetworkConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    layers: Vec<LayerSpec>,
    index: BTreeMap<String, usize>,
    total: usize,
}

impl Layout {
    pub fn new(layers: Vec<(String, usize, usize, bool, bool)>) -> Layout {
        let mut specs = Vec::with_capacity(layers.len());
        let mut index = BTreeMap::new();
        let mut offset = 0;
        for (name, rows, cols, has_bias, zero_init) in layers {
            let spec = LayerSpec {
                name: name.clone(),
                offset,
                rows,
                cols,
                has_bias,
                zero_init,
            };
            offset += spec.total_len();
            index.insert(name, specs.len());
            specs.push(spec);
        }
        Layout {
            layers: specs,
            index,
            total: offset,
        }
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn get(&self, name: &str) -> &LayerSpec {
        let idx = self.index.get(name).unwrap_or_else(|| {
            panic!("unknown parameter layer `{name}`");
        });
        &self.layers[*idx]
    }
}

/// Network parameters: one flat vector plus the layout describing it.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub data: Vec<f64>,
    layout: Layout,
    /// Seed recorded at initialization, for provenance.
    pub init_seed: u64,
}

impl Params {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Weight matrix view, shape (rows, cols): `y = x · W`.
    pub fn weight(&self, name: &str) -> ArrayView2<'_, f64> {
        let spec = self.layout.get(name);
        ArrayView2::from_shape(
            (spec.rows, spec.cols),
            &self.data[spec.offset..spec.offset + spec.weight_len()],
        )
        .expect("layout shape")
    }

    /// Bias slice of length `cols`.
    pub fn bias(&self, name: &str) -> &[f64] {
        let spec = self.layout.get(name);
        assert!(spec.has_bias, "layer `{name}` has no bias");
        &self.data[spec.offset + spec.weight_len()..spec.offset + spec.total_len()]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Mutable views over a gradient vector shaped like the parameters.
pub struct GradView<'a> {
    pub data: &'a mut [f64],
    layout: &'a Layout,
}

impl<'a> GradView<'a> {
    pub fn new(data: &'a mut [f64], layout: &'a Layout) -> Self {
        assert_eq!(data.len(), layout.total_len());
        GradView { data, layout }
    }

    pub fn weight_mut(&mut self, name: &str) -> ArrayViewMut2<'_, f64> {
        let spec = self.layout.get(name);
        ArrayViewMut2::from_shape(
            (spec.rows, spec.cols),
            &mut self.data[spec.offset..spec.offset + spec.weight_len()],
        )
        .expect("layout shape")
    }

    pub fn bias_mut(&mut self, name: &str) -> &mut [f64] {
        let spec = self.layout.get(name);
        assert!(spec.has_bias, "layer `{name}` has no bias");
        &mut self.data[spec.offset + spec.weight_len()..spec.offset + spec.total_len()]
    }
}

/// Fan-in-scaled uniform initialization; modulation tables and the token
/// embedding start at zero, biases at zero.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<Params> {
    config.validate()?;
    let layout = config.layout();
    let mut data = vec![0.0; layout.total_len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for spec in layout.layers() {
        if spec.zero_init {
            continue;
        }
        let bound = (1.0 / spec.rows as f64).sqrt();
        for slot in data[spec.offset..spec.offset + spec.weight_len()].iter_mut() {
            *slot = rng.gen_range(-bound..bound);
        }
    }
    Ok(Params {
        data,
        layout,
        init_seed: seed,
    })
}

/// Adam optimizer state carried inside a checkpoint so training can resume.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub adam_step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// A params file: config, weights, and optional optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub params: Params,
    pub train_state: Option<TrainState>,
}

fn write_f64s(out: &mut impl Write, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_f64s(input: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    input.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save_params(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&CHECKPOINT_MAGIC)?;
    f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let config_json = serde_json::to_vec(&checkpoint.config)?;
    f.write_all(&(config_json.len() as u64).to_le_bytes())?;
    f.write_all(&config_json)?;
    f.write_all(&(checkpoint.params.len() as u64).to_le_bytes())?;
    write_f64s(&mut f, &checkpoint.params.data)?;
    f.write_all(&checkpoint.params.init_seed.to_le_bytes())?;
    match &checkpoint.train_state {
        None => f.write_all(&[0u8])?,
        Some(state) => {
            f.write_all(&[1u8])?;
            f.write_all(&(state.epoch as u64).to_le_bytes())?;
            f.write_all(&state.adam_step.to_le_bytes())?;
            write_f64s(&mut f, &state.m)?;
            write_f64s(&mut f, &state.v)?;
        }
    }

    let sidecar = path.with_extension("json");
    let meta = serde_json::json!({
        "config": checkpoint.config,
        "epoch": checkpoint.train_state.as_ref().map(|s| s.epoch),
        "parameters": checkpoint.params.len(),
    });
    fs::write(sidecar, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<Checkpoint> {
    let mut f = fs::File::open(path).map_err(|_| {
        Error::MissingCheckpoint(path.display().to_string())
    })?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Parse {
            file: path.display().to_string(),
            message: "bad checkpoint magic".into(),
        });
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut u64buf = [0u8; 8];
    f.read_exact(&mut u64buf)?;
    let config_len = u64::from_le_bytes(u64buf) as usize;
    let mut config_json = vec![0u8; config_len];
    f.read_exact(&mut config_json)?;
    let config: NetworkConfig = serde_json::from_slice(&config_json).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    config.validate()?;
    let layout = config.layout();

    f.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    if count != layout.total_len() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint holds {count} parameters but the config implies {}",
            layout.total_len()
        )));
    }
    let data = read_f64s(&mut f, count)?;
    f.read_exact(&mut u64buf)?;
    let init_seed = u64::from_le_bytes(u64buf);

    let mut flag = [0u8; 1];
    f.read_exact(&mut flag)?;
    let train_state = if flag[0] == 1 {
        f.read_exact(&mut u64buf)?;
        let epoch = u64::from_le_bytes(u64buf) as usize;
        f.read_exact(&mut u64buf)?;
        let adam_step = u64::from_le_bytes(u64buf);
        let m = read_f64s(&mut f, count)?;
        let v = read_f64s(&mut f, count)?;
        Some(TrainState {
            epoch,
            adam_step,
            m,
            v,
        })
    } else {
        None
    };

    Ok(Checkpoint {
        config,
        params: Params {
            data,
            layout,
            init_seed,
        },
        train_state,
    })
}
