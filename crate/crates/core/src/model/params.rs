//! Named parameter storage and the binder that exposes parameters to a tape.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Array, Gradients, Tape, Var};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VICP";

/// Flat archive of parameters keyed by stable dotted names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Array>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.values().map(Array::len).sum()
    }

    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.params.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) {
        self.params.insert(name.into(), value);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Copies every parameter of `other` whose name starts with `prefix` and
    /// whose shape matches ours; returns the number copied.
    pub fn merge_from(&mut self, other: &ParamStore, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for (name, value) in other.params.iter().filter(|(k, _)| k.starts_with(prefix)) {
            match self.params.get_mut(name) {
                Some(dst) if dst.shape() == value.shape() => {
                    *dst = value.clone();
                    copied += 1;
                }
                Some(dst) => {
                    return Err(Error::Shape(format!(
                        "{name}: shape {:?} does not match {:?}",
                        value.shape(),
                        dst.shape()
                    )))
                }
                None => log::warn!("{name}: not a parameter of this model, skipped"),
            }
        }
        Ok(copied)
    }

    /// Same names and shapes as `other`.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, value) in &self.params {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(value.shape().len() as u32).to_le_bytes())?;
            for &d in value.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> std::result::Result<Self, String> {
        fn u32_of(r: &mut impl Read) -> std::result::Result<u32, String> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|e| e.to_string())?;
            Ok(u32::from_le_bytes(b))
        }
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err("not a parameter archive".into());
        }
        let n = u32_of(&mut r)?;
        let mut params = BTreeMap::new();
        for _ in 0..n {
            let len = u32_of(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|e| e.to_string())?;
            let name = String::from_utf8(name).map_err(|e| e.to_string())?;
            let ndim = u32_of(&mut r)? as usize;
            let shape = (0..ndim)
                .map(|_| u32_of(&mut r).map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let count: usize = shape.iter().product();
            let mut bytes = vec![0u8; count * 8];
            r.read_exact(&mut bytes).map_err(|e| format!("{name}: {e}"))?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(name, Array::new(&shape, data));
        }
        Ok(Self { params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file)).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    He { fan_in: usize },
    /// Normal with standard deviation `sqrt(1 / fan_in)`.
    Lecun { fan_in: usize },
}

enum Source<'s> {
    Init {
        store: RefCell<ParamStore>,
        rng: RefCell<ChaCha8Rng>,
    },
    Bind(&'s ParamStore),
}

/// Hands out one tape variable per parameter name. In init mode missing
/// parameters are created on first request, so running the forward pass once
/// defines the full parameter set.
pub struct Binder<'t, 's> {
    tape: &'t Tape,
    source: Source<'s>,
    trainable: bool,
    vars: RefCell<BTreeMap<String, Var<'t>>>,
}

impl<'t, 's> Binder<'t, 's> {
    pub fn init(tape: &'t Tape, seed: u64) -> Self {
        Self {
            tape,
            source: Source::Init {
                store: RefCell::default(),
                rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            },
            trainable: false,
            vars: RefCell::default(),
        }
    }

    /// Binds existing parameters; `trainable` decides whether gradients flow to them.
    pub fn bind(tape: &'t Tape, store: &'s ParamStore, trainable: bool) -> Self {
        Self {
            tape,
            source: Source::Bind(store),
            trainable,
            vars: RefCell::default(),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Var<'t> {
        if let Some(v) = self.vars.borrow().get(name) {
            assert_eq!(v.shape(), shape, "parameter {name} requested with two shapes");
            return *v;
        }
        let value = match &self.source {
            Source::Bind(store) => {
                let v = store
                    .get(name)
                    .unwrap_or_else(|| panic!("parameter {name} missing from store"));
                assert_eq!(v.shape(), shape, "parameter {name} shape");
                v.clone()
            }
            Source::Init { store, rng } => {
                let value = sample(shape, init, &mut rng.borrow_mut());
                store.borrow_mut().insert(name, value.clone());
                value
            }
        };
        let var = if self.trainable {
            self.tape.leaf(value)
        } else {
            self.tape.constant(value)
        };
        self.vars.borrow_mut().insert(name.to_string(), var);
        var
    }

    /// Parameters created in init mode.
    pub fn into_store(self) -> ParamStore {
        match self.source {
            Source::Init { store, .. } => store.into_inner(),
            Source::Bind(store) => store.clone(),
        }
    }

    /// Gradient of every bound parameter; parameters the loss does not reach
    /// get zeros.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Array> {
        self.vars
            .borrow()
            .iter()
            .map(|(name, var)| {
                let g = grads
                    .get(*var)
                    .cloned()
                    .unwrap_or_else(|| Array::zeros(&var.shape()));
                (name.clone(), g)
            })
            .collect()
    }

    pub fn var(&self, name: &str) -> Option<Var<'t>> {
        self.vars.borrow().get(name).copied()
    }
}

fn sample(shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Array {
    let std = match init {
        Init::Zeros => return Array::zeros(shape),
        Init::Ones => return Array::full(shape, 1.0),
        Init::He { fan_in } => (2.0 / fan_in as f64).sqrt(),
        Init::Lecun { fan_in } => (1.0 / fan_in as f64).sqrt(),
    };
    let normal = Normal::new(0.0, std).expect("finite std");
    Array::from_fn(shape, |_| normal.sample(rng))
}
