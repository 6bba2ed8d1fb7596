use super::{Architecture, Network, NetworkSpec, NnError, Result};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LNET";
pub const CHECKPOINT_VERSION: u32 = 1;
const SPEC_RECORD: &str = "__spec__";
const MAX_NAME: usize = 4096;
const MAX_RANK: usize = 8;

/// Write named tensors as `LNET` records.
pub fn write_checkpoint<W: Write>(mut out: W, records: &[(String, Tensor)]) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, t) in records {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Read every record of an `LNET` stream.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match input.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_le_bytes(len) as usize;
        if len > MAX_NAME {
            return Err(NnError::Checkpoint(format!("name length {len} too large")));
        }
        let mut name = vec![0u8; len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| NnError::Checkpoint("name is not utf-8".into()))?;
        let rank = read_u32(&mut input)? as usize;
        if rank > MAX_RANK {
            return Err(NnError::Checkpoint(format!("rank {rank} too large for {name}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count.ok_or_else(|| NnError::Checkpoint(format!("extent overflow in {name}")))?;
        let mut bytes = Vec::new();
        (&mut input).take(count as u64 * 8).read_to_end(&mut bytes)?;
        if bytes.len() != count * 8 {
            return Err(NnError::Checkpoint(format!("truncated data for {name}")));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        records.push((name, Tensor::new(shape, data)?));
    }
    Ok(records)
}

fn spec_record(spec: &NetworkSpec) -> Tensor {
    let values = vec![
        spec.architecture.code(),
        spec.scale,
        spec.num_classes as f64,
        spec.num_input_channels as f64,
        spec.num_initial_convs as f64,
        spec.window as f64,
        if spec.scale_pool_windows { 1.0 } else { 0.0 },
    ];
    Tensor::new(vec![values.len()], values).expect("rank-1 record")
}

fn spec_from_record(t: &Tensor) -> Result<NetworkSpec> {
    let v = t.data();
    if v.len() != 7 {
        return Err(NnError::Checkpoint(format!("spec record has {} values", v.len())));
    }
    let architecture = Architecture::from_code(v[0]).ok_or_else(|| NnError::Checkpoint("unknown architecture".into()))?;
    let spec = NetworkSpec {
        architecture,
        scale: v[1],
        num_classes: v[2] as usize,
        num_input_channels: v[3] as usize,
        num_initial_convs: v[4] as usize,
        window: v[5] as usize,
        scale_pool_windows: v[6] != 0.0,
    };
    spec.validate()?;
    Ok(spec)
}

/// Save a network with its spec so it can be rebuilt without outside context.
pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let mut records = vec![(SPEC_RECORD.to_string(), spec_record(net.spec()))];
    records.extend(net.params().iter().cloned());
    write_checkpoint(BufWriter::new(File::create(path)?), &records)
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let mut records = read_checkpoint(BufReader::new(File::open(path)?))?;
    if records.first().map(|(n, _)| n.as_str()) != Some(SPEC_RECORD) {
        return Err(NnError::Checkpoint("missing spec record".into()));
    }
    let (_, spec) = records.remove(0);
    Network::from_params(spec_from_record(&spec)?, records)
}
