//! Binary network checkpoints.
//!
//! Layout (all integers little-endian, all floats stored as raw IEEE-754
//! bit patterns, so a save/load round trip is bit-exact):
//!
//! ```text
//! magic   6 bytes  "GLNET\0"
//! version u16      currently 1
//! n_sizes u32      number of entries in layer_sizes
//! sizes   u32 * n_sizes
//! hidden  u8 * (n_layers - 1)   0 = tanh, 1 = relu
//! output  u8                    0 = identity, 1 = tanh, 2 = clip
//!         [f64 lo, f64 hi]      only when output == 2
//! layers  for each layer k: f64 * (out_k*in_k) weights, f64 * out_k biases
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::net::{Activation, Network, OutputActivation};

const MAGIC: &[u8; 6] = b"GLNET\0";
const VERSION: u16 = 1;

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let sizes = net.layer_sizes();
    out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for &s in sizes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for &act in net.hidden_activations() {
        out.push(match act {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        });
    }
    match net.output_activation() {
        OutputActivation::Identity => out.push(0),
        OutputActivation::Tanh => out.push(1),
        OutputActivation::Clip { lo, hi } => {
            out.push(2);
            out.extend_from_slice(&lo.to_bits().to_le_bytes());
            out.extend_from_slice(&hi.to_bits().to_le_bytes());
        }
    }
    for k in 0..net.weights().len() {
        for &w in &net.weights()[k] {
            out.extend_from_slice(&w.to_bits().to_le_bytes());
        }
        for &b in &net.biases()[k] {
            out.extend_from_slice(&b.to_bits().to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::data(format!(
                "checkpoint truncated: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(u64::from_le_bytes(self.take(8)?.try_into().unwrap())))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(6)? != MAGIC {
        return Err(Error::data("not a network checkpoint (bad magic)".to_string()));
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::data(format!("unsupported checkpoint version {version}")));
    }
    let n_sizes = c.u32()? as usize;
    if !(2..=64).contains(&n_sizes) {
        return Err(Error::data(format!("implausible layer count {n_sizes}")));
    }
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(c.u32()? as usize);
    }
    let n_layers = n_sizes - 1;
    let mut hidden = Vec::with_capacity(n_layers - 1);
    for _ in 0..n_layers - 1 {
        hidden.push(match c.u8()? {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            t => return Err(Error::data(format!("unknown hidden activation tag {t}"))),
        });
    }
    let output = match c.u8()? {
        0 => OutputActivation::Identity,
        1 => OutputActivation::Tanh,
        2 => {
            let lo = c.f64()?;
            let hi = c.f64()?;
            OutputActivation::Clip { lo, hi }
        }
        t => return Err(Error::data(format!("unknown output activation tag {t}"))),
    };
    let mut weights = Vec::with_capacity(n_layers);
    let mut biases = Vec::with_capacity(n_layers);
    for k in 0..n_layers {
        let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
        let mut w = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in * fan_out {
            w.push(c.f64()?);
        }
        let mut b = Vec::with_capacity(fan_out);
        for _ in 0..fan_out {
            b.push(c.f64()?);
        }
        weights.push(w);
        biases.push(b);
    }
    if c.pos != bytes.len() {
        return Err(Error::data(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Network::from_parts(sizes, weights, biases, hidden, output)
}

pub fn save_file(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(net))?;
    Ok(())
}

pub fn load_file(path: impl AsRef<Path>) -> Result<Network> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let net =
            Network::new(&[4, 32, 32, 2], Activation::Relu, OutputActivation::Tanh, 123).unwrap();
        let bytes = to_bytes(&net);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(net, back);
        assert_eq!(bytes, to_bytes(&back), "serialized form must be byte-stable");
    }

    #[test]
    fn round_trip_preserves_clip_bounds() {
        let net = Network::new(
            &[2, 8, 1],
            Activation::Tanh,
            OutputActivation::Clip { lo: 0.0, hi: 50.0 },
            9,
        )
        .unwrap();
        let back = from_bytes(&to_bytes(&net)).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn corrupt_inputs_are_data_errors() {
        let net = Network::new(&[2, 3, 1], Activation::Tanh, OutputActivation::Identity, 1).unwrap();
        let mut bytes = to_bytes(&net);

        assert!(matches!(from_bytes(&bytes[..10]), Err(Error::Data(_))));

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(from_bytes(&trailing), Err(Error::Data(_))));

        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Data(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let net = Network::new(&[3, 5, 2], Activation::Relu, OutputActivation::Identity, 4).unwrap();
        save_file(&net, &path).unwrap();
        let back = load_file(&path).unwrap();
        assert_eq!(net, back);
    }
}
