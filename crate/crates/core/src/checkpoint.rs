//! Model checkpoint serialization.
//!
//! Layout (all integers and floats little-endian; see docs/formats.md):
//!
//! ```text
//! magic  b"SDNC"
//! u32    version (currently 1)
//! u32    layer count
//! per layer:
//!   u8   kind tag: 0 Conv2D, 1 MaxPool2D, 2 Dense, 3 ReLU, 4 Sigmoid,
//!        5 Softmax
//!   Conv2D:    u32 in_channels, u32 out_channels, u32 kernel,
//!              f64 weights (oc*ic*k*k), f64 bias (oc)
//!   MaxPool2D: u32 window, u32 stride
//!   Dense:     u32 inputs, u32 outputs, f64 weights (out*in), f64 bias (out)
//!   activations: no payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::Layer;
use crate::network::Network;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SDNC";
const VERSION: u32 = 1;

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    write_network(net, &mut w).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_network(path: &Path) -> Result<Network> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    read_network(&mut r)
}

pub fn write_network(net: &Network, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        match layer {
            Layer::Conv2D {
                weight,
                bias,
                in_channels,
                out_channels,
                kernel,
            } => {
                w.write_all(&[0u8])?;
                for v in [*in_channels, *out_channels, *kernel] {
                    w.write_all(&(v as u32).to_le_bytes())?;
                }
                write_floats(weight, w)?;
                write_floats(bias, w)?;
            }
            Layer::MaxPool2D { window, stride } => {
                w.write_all(&[1u8])?;
                w.write_all(&(*window as u32).to_le_bytes())?;
                w.write_all(&(*stride as u32).to_le_bytes())?;
            }
            Layer::Dense {
                weight,
                bias,
                inputs,
                outputs,
            } => {
                w.write_all(&[2u8])?;
                w.write_all(&(*inputs as u32).to_le_bytes())?;
                w.write_all(&(*outputs as u32).to_le_bytes())?;
                write_floats(weight, w)?;
                write_floats(bias, w)?;
            }
            Layer::Relu => w.write_all(&[3u8])?,
            Layer::Sigmoid => w.write_all(&[4u8])?,
            Layer::Softmax => w.write_all(&[5u8])?,
        }
    }
    w.flush()
}

pub fn read_network(r: &mut impl Read) -> Result<Network> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let count = read_u32(r)? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let mut tag = [0u8; 1];
        read_exact(r, &mut tag)?;
        let layer = match tag[0] {
            0 => {
                let ic = read_u32(r)? as usize;
                let oc = read_u32(r)? as usize;
                let k = read_u32(r)? as usize;
                let weight = read_floats(r, &[oc, ic, k, k])?;
                let bias = read_floats(r, &[oc])?;
                Layer::Conv2D {
                    weight,
                    bias,
                    in_channels: ic,
                    out_channels: oc,
                    kernel: k,
                }
            }
            1 => Layer::MaxPool2D {
                window: read_u32(r)? as usize,
                stride: read_u32(r)? as usize,
            },
            2 => {
                let inputs = read_u32(r)? as usize;
                let outputs = read_u32(r)? as usize;
                let weight = read_floats(r, &[outputs, inputs])?;
                let bias = read_floats(r, &[outputs])?;
                Layer::Dense {
                    weight,
                    bias,
                    inputs,
                    outputs,
                }
            }
            3 => Layer::Relu,
            4 => Layer::Sigmoid,
            5 => Layer::Softmax,
            t => return Err(Error::Format(format!("unknown layer tag {t}"))),
        };
        layers.push(layer);
    }
    Ok(Network::new(layers))
}

fn write_floats(t: &Tensor, w: &mut impl Write) -> std::io::Result<()> {
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_floats(r: &mut impl Read, shape: &[usize]) -> Result<Tensor> {
    let len: usize = shape.iter().product();
    let mut buf = vec![0u8; len * 8];
    read_exact(r, &mut buf)?;
    let data = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(shape, data)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("truncated checkpoint".into()))
}
