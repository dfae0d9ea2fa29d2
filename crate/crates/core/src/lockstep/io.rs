use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::class::{derive_class, ClassParams, LockstepClass};
use super::zfamily::ZFamily;
use crate::payload::Payload;

/// One class in a chain file. Groups and rounds are 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub class_index: usize,
    pub inputs_per_group: Vec<u8>,
    /// `(i, j, excluded_group)` for every `z_i^j`.
    pub z: Vec<(usize, usize, usize)>,
    /// `(i, j, [(round, payload, count)])` for every `S_i^j`.
    #[serde(rename = "S")]
    pub s: Vec<(usize, usize, Vec<(u32, Payload, u32)>)>,
}

impl ClassRecord {
    pub fn from_class(class_index: usize, c: &LockstepClass) -> Self {
        let g = c.groups();
        let mut z = Vec::new();
        let mut s = Vec::new();
        for i in 1..=c.horizon() {
            for j in 0..g {
                z.push((i, j + 1, c.z.excluded(i, j) + 1));
                s.push((
                    i,
                    j + 1,
                    c.s_set(i, j)
                        .iter()
                        .map(|(r, p, n)| (r, p.clone(), n))
                        .collect(),
                ));
            }
        }
        ClassRecord {
            class_index,
            inputs_per_group: c.inputs.clone(),
            z,
            s,
        }
    }

    /// Rebuilds the class by re-deriving it from inputs and `z`, and
    /// checks the stored `S` sets against the derivation.
    pub fn to_class(&self, params: &ClassParams) -> Result<LockstepClass, String> {
        let g = self.inputs_per_group.len();
        let e = self.z.iter().map(|x| x.0).max().unwrap_or(0);
        let mut excluded = vec![vec![usize::MAX; g]; e];
        for &(i, j, x) in &self.z {
            if i == 0 || j == 0 || x == 0 || j > g {
                return Err(format!("bad z entry ({i}, {j}, {x})"));
            }
            excluded[i - 1][j - 1] = x - 1;
        }
        let zf = ZFamily::derive(g, excluded).map_err(|e| e.to_string())?;
        let class = derive_class(params, &self.inputs_per_group, zf).map_err(|e| e.to_string())?;
        if ClassRecord::from_class(self.class_index, &class) != *self {
            return Err(format!(
                "class {}: stored S sets differ from the derivation",
                self.class_index
            ));
        }
        Ok(class)
    }
}

pub fn write_chain<W: Write>(
    mut out: W,
    classes: impl IntoIterator<Item = ClassRecord>,
) -> io::Result<()> {
    for r in classes {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_chain<R: BufRead>(input: R) -> impl Iterator<Item = io::Result<ClassRecord>> {
    input
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| serde_json::from_str(&l?).map_err(io::Error::other))
}
