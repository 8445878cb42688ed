use crate::error::{Error, Result};
use crate::heads::FfnLayer;
use crate::numerics::io::{matrix_to_bytes, read_matrices};
use crate::numerics::{Matrix, Rng, Tape, Var};

/// Two dense layers with a GeLU between them; output rows are unit length.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub first: FfnLayer,
    pub second: FfnLayer,
}

impl Encoder {
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            first: FfnLayer::init(input, hidden, true, rng),
            second: FfnLayer::init(hidden, output, false, rng),
        }
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut p = self.first.params();
        p.extend(self.second.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.first.params_mut();
        p.extend(self.second.params_mut());
        p
    }

    /// The four parameter matrices in the binary matrix format, back to back.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.params()
            .into_iter()
            .flat_map(matrix_to_bytes)
            .collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut ms = read_matrices(bytes)?.into_iter();
        let (Some(w1), Some(b1), Some(w2), Some(b2), None) =
            (ms.next(), ms.next(), ms.next(), ms.next(), ms.next())
        else {
            return Err(Error::Format {
                offset: 0,
                detail: "encoder file must hold exactly 4 matrices".into(),
            });
        };
        if b1.shape() != (1, w1.cols()) || w2.rows() != w1.cols() || b2.shape() != (1, w2.cols()) {
            return Err(Error::Format {
                offset: 0,
                detail: "encoder matrices have inconsistent shapes".into(),
            });
        }
        Ok(Self {
            first: FfnLayer {
                w: w1,
                b: b1,
                gelu: true,
            },
            second: FfnLayer {
                w: w2,
                b: b2,
                gelu: false,
            },
        })
    }

    pub(crate) fn forward_on<'t>(&self, ps: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let h = self.first.forward_on(&ps[0..2], x)?;
        self.second.forward_on(&ps[2..4], h)?.row_l2_normalize()
    }
}

pub fn encode(encoder: &Encoder, x: &Matrix) -> Result<Matrix> {
    let tape = Tape::new();
    let ps: Vec<Var> = encoder
        .params()
        .into_iter()
        .map(|p| tape.constant(p.clone()))
        .collect();
    Ok((*encoder.forward_on(&ps, tape.constant(x.clone()))?.value()).clone())
}
