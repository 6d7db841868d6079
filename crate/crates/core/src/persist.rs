//! Binary containers for classifiers and stacking artifacts.
//!
//! All containers are little-endian: a four-byte magic, a body of `u32`
//! counts and `f64` values, and a trailing SHA-256 of everything before it.
//!
//! | magic  | content                                   |
//! |--------|-------------------------------------------|
//! | `TNC1` | MPO classifier                            |
//! | `TNT1` | TTO classifier with its topology table    |
//! | `TNS1` | stacking artifact, tagged by variant      |

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::classifier::Model;
use crate::error::{Error, Result};
use crate::mps::{Centre, MpoClassifier, Mps};
use crate::stacking::{DenseLayer, HierarchicalStack, StackingUnitary};
use crate::tensor::DenseTensor;
use crate::ttn::{Child, Ttn, TtnNode, TtoClassifier};

pub const MPO_MAGIC: &[u8; 4] = b"TNC1";
pub const TTO_MAGIC: &[u8; 4] = b"TNT1";
pub const STACK_MAGIC: &[u8; 4] = b"TNS1";

const DIGEST_LEN: usize = 32;

struct Writer(Vec<u8>);

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        Self(magic.to_vec())
    }

    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("container fields fit in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn tensor(&mut self, t: &DenseTensor) {
        self.u32(t.rank());
        for &e in t.shape() {
            self.u32(e);
        }
        self.f64s(t.data());
    }

    fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.0);
        self.0.extend_from_slice(&digest);
        self.0
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    /// Checks magic and trailer; the body is what lies between them.
    fn open(bytes: &'a [u8], magic: &[u8; 4], path: &'a Path) -> Result<Self> {
        if bytes.len() < 4 + DIGEST_LEN {
            return Err(Error::format(path, "container is truncated"));
        }
        if &bytes[..4] != magic {
            return Err(Error::format(
                path,
                format!("bad magic, expected {}", String::from_utf8_lossy(magic)),
            ));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::format(path, "checksum mismatch"));
        }
        Ok(Self {
            data: body,
            pos: 4,
            path,
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::format(self.path, "unexpected end of container"))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("four bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::format(self.path, "length overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect())
    }

    fn tensor(&mut self) -> Result<DenseTensor> {
        let rank = self.u32()?;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::format(self.path, "tensor extent overflow"))?;
        let data = self.f64s(len)?;
        DenseTensor::new(shape, data).map_err(|e| Error::format(self.path, e.to_string()))
    }

    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        (0..n).map(|_| self.u32()).collect()
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::format(self.path, "trailing bytes after container body"));
        }
        Ok(())
    }

    /// Re-tags structural errors from the domain constructors.
    fn check<T>(&self, r: Result<T>) -> Result<T> {
        r.map_err(|e| Error::format(self.path, e.to_string()))
    }
}

fn write_usizes(w: &mut Writer, v: &[usize]) {
    w.u32(v.len());
    for &x in v {
        w.u32(x);
    }
}

// ---------------------------------------------------------------------------
// MPO classifier

fn write_mpo_body(w: &mut Writer, c: &MpoClassifier) {
    let m = &c.mps;
    w.u32(m.qubit_count());
    w.u32(c.label_qubits);
    w.u32(c.d_final);
    w.u32(m.sites().len());
    w.u32(c.class_count);
    w.u8(c.orthogonalised as u8);
    w.u32(m.reference_index().expect("classifier is labelled"));
    write_usizes(w, m.labels());
    for s in m.sites() {
        for &e in s.shape() {
            w.u32(e);
        }
        w.f64s(s.data());
    }
}

fn read_mpo_body(r: &mut Reader) -> Result<MpoClassifier> {
    let qubits = r.u32()?;
    let label_qubits = r.u32()?;
    let d_final = r.u32()?;
    let site_count = r.u32()?;
    let class_count = r.u32()?;
    let orthogonalised = r.u8()? != 0;
    let reference = r.u32()?;
    let labels = r.usizes()?;
    let mut sites = Vec::with_capacity(site_count);
    for _ in 0..site_count {
        let shape = vec![r.u32()?, r.u32()?, r.u32()?];
        let len = shape.iter().product();
        let data = r.f64s(len)?;
        sites.push(r.check(DenseTensor::new(shape, data))?);
    }
    if site_count != qubits + 1 || reference >= site_count {
        return Err(Error::format(r.path, "site count does not match the qubit count"));
    }
    let mps = r.check(Mps::from_sites(sites, Centre::Site(reference), Some(reference), labels))?;
    Ok(MpoClassifier {
        mps,
        class_count,
        label_qubits,
        d_final,
        orthogonalised,
    })
}

pub fn encode_mpo(c: &MpoClassifier) -> Vec<u8> {
    let mut w = Writer::new(MPO_MAGIC);
    write_mpo_body(&mut w, c);
    w.finish()
}

pub fn decode_mpo(bytes: &[u8], path: &Path) -> Result<MpoClassifier> {
    let mut r = Reader::open(bytes, MPO_MAGIC, path)?;
    let c = read_mpo_body(&mut r)?;
    r.done()?;
    Ok(c)
}

// ---------------------------------------------------------------------------
// TTO classifier

pub fn encode_tto(c: &TtoClassifier) -> Vec<u8> {
    let t = &c.ttn;
    let mut w = Writer::new(TTO_MAGIC);
    w.u32(t.qubit_count());
    w.u32(c.label_qubits);
    w.u32(c.d_final);
    w.u32(t.nodes().len());
    w.u32(c.class_count);
    w.u8(c.orthogonalised as u8);
    write_usizes(&mut w, t.labels());
    for node in t.nodes() {
        w.u32(node.children.len());
        for child in &node.children {
            match *child {
                Child::Qubit(q) => {
                    w.u8(0);
                    w.u32(q);
                }
                Child::Node(i) => {
                    w.u8(1);
                    w.u32(i);
                }
            }
        }
    }
    for node in t.nodes() {
        w.tensor(&node.tensor);
    }
    w.finish()
}

pub fn decode_tto(bytes: &[u8], path: &Path) -> Result<TtoClassifier> {
    let mut r = Reader::open(bytes, TTO_MAGIC, path)?;
    let qubits = r.u32()?;
    let label_qubits = r.u32()?;
    let d_final = r.u32()?;
    let node_count = r.u32()?;
    let class_count = r.u32()?;
    let orthogonalised = r.u8()? != 0;
    let labels = r.usizes()?;
    let mut children = Vec::with_capacity(node_count);
    for _ in 0..node_count {
        let k = r.u32()?;
        let list = (0..k)
            .map(|_| match r.u8()? {
                0 => Ok(Child::Qubit(r.u32()?)),
                1 => Ok(Child::Node(r.u32()?)),
                t => Err(Error::format(r.path, format!("unknown child tag {t}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        children.push(list);
    }
    let mut nodes = Vec::with_capacity(node_count);
    for children in children {
        nodes.push(TtnNode {
            children,
            tensor: r.tensor()?,
        });
    }
    r.done()?;
    let ttn = r.check(Ttn::from_nodes(qubits, nodes, labels))?;
    Ok(TtoClassifier {
        ttn,
        class_count,
        label_qubits,
        d_final,
        orthogonalised,
    })
}

// ---------------------------------------------------------------------------
// models on disk

pub fn encode_model(model: &Model) -> Vec<u8> {
    match model {
        Model::Mps(c) => encode_mpo(c),
        Model::Ttn(c) => encode_tto(c),
    }
}

/// Decodes either classifier container, dispatching on the magic.
pub fn decode_model(bytes: &[u8], path: &Path) -> Result<Model> {
    match bytes.get(..4) {
        Some(m) if m == MPO_MAGIC => decode_mpo(bytes, path).map(Model::Mps),
        Some(m) if m == TTO_MAGIC => decode_tto(bytes, path).map(Model::Ttn),
        _ => Err(Error::format(path, "not a classifier container")),
    }
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    write_file(path.as_ref(), &encode_model(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    decode_model(&read_file(path)?, path)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// stacking artifacts

#[derive(Debug, Clone, PartialEq)]
pub enum StackArtifact {
    Dense(StackingUnitary),
    Hierarchical(HierarchicalStack),
    Mpo { copies: usize, classifier: MpoClassifier },
    Classical(DenseLayer),
}

impl StackArtifact {
    pub fn tag(&self) -> &'static str {
        match self {
            StackArtifact::Dense(_) => "dense",
            StackArtifact::Hierarchical(_) => "hier",
            StackArtifact::Mpo { .. } => "mpo",
            StackArtifact::Classical(_) => "classical",
        }
    }
}

pub fn encode_stack(a: &StackArtifact) -> Vec<u8> {
    let mut w = Writer::new(STACK_MAGIC);
    match a {
        StackArtifact::Dense(v) => {
            w.u8(0);
            w.u32(v.copies);
            w.tensor(&v.matrix);
        }
        StackArtifact::Hierarchical(h) => {
            w.u8(1);
            w.u32(h.copies_per_layer);
            w.u32(h.layers.len());
            for v in &h.layers {
                w.tensor(&v.matrix);
            }
        }
        StackArtifact::Mpo { copies, classifier } => {
            w.u8(2);
            w.u32(*copies);
            write_mpo_body(&mut w, classifier);
        }
        StackArtifact::Classical(l) => {
            w.u8(3);
            w.u32(l.inputs);
            w.u32(l.outputs());
            w.f64s(&l.weights);
            w.f64s(&l.biases);
        }
    }
    w.finish()
}

pub fn decode_stack(bytes: &[u8], path: &Path) -> Result<StackArtifact> {
    let mut r = Reader::open(bytes, STACK_MAGIC, path)?;
    let a = match r.u8()? {
        0 => {
            let copies = r.u32()?;
            StackArtifact::Dense(StackingUnitary {
                copies,
                matrix: r.tensor()?,
            })
        }
        1 => {
            let copies = r.u32()?;
            let n = r.u32()?;
            let layers = (0..n)
                .map(|_| {
                    Ok(StackingUnitary {
                        copies,
                        matrix: r.tensor()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            StackArtifact::Hierarchical(HierarchicalStack {
                copies_per_layer: copies,
                layers,
            })
        }
        2 => {
            let copies = r.u32()?;
            StackArtifact::Mpo {
                copies,
                classifier: read_mpo_body(&mut r)?,
            }
        }
        3 => {
            let inputs = r.u32()?;
            let outputs = r.u32()?;
            let weights = r.f64s(inputs * outputs)?;
            let biases = r.f64s(outputs)?;
            StackArtifact::Classical(DenseLayer {
                weights,
                biases,
                inputs,
            })
        }
        t => return Err(Error::format(path, format!("unknown stacking tag {t}"))),
    };
    r.done()?;
    Ok(a)
}

pub fn save_stack(path: impl AsRef<Path>, a: &StackArtifact) -> Result<()> {
    write_file(path.as_ref(), &encode_stack(a))
}

pub fn load_stack(path: impl AsRef<Path>) -> Result<StackArtifact> {
    let path = path.as_ref();
    decode_stack(&read_file(path)?, path)
}
