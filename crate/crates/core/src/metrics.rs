//! Dice similarity scores and subset aggregation.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::volume::LabelMap;

/// Clinical subset a target volume belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subset {
    Normal,
    Abnormal,
}

impl Subset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subset::Normal => "normal",
            Subset::Abnormal => "abnormal",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = ();

    fn from_str(s: &str) -> core::result::Result<Self, ()> {
        match s {
            "normal" => Ok(Subset::Normal),
            "abnormal" => Ok(Subset::Abnormal),
            _ => Err(()),
        }
    }
}

/// Per-class DSC. A class absent from both maps scores 1, absent from
/// exactly one scores 0.
pub fn dsc(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Result<Vec<f64>> {
    pred.dims().check_same(&gt.dims())?;
    let mut inter = alloc::vec![0usize; classes];
    let mut np = alloc::vec![0usize; classes];
    let mut ng = alloc::vec![0usize; classes];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p as usize, g as usize);
        if p < classes {
            np[p] += 1;
        }
        if g < classes {
            ng[g] += 1;
        }
        if p == g && p < classes {
            inter[p] += 1;
        }
    }
    Ok((0..classes)
        .map(|c| match (np[c], ng[c]) {
            (0, 0) => 1.0,
            (a, b) => 2.0 * inter[c] as f64 / (a + b) as f64,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeDsc {
    pub name: String,
    pub subset: Option<Subset>,
    /// Indexed by class, background first.
    pub per_class: Vec<f64>,
}

impl VolumeDsc {
    /// Mean over foreground classes (class 0 excluded).
    pub fn foreground_mean(&self) -> f64 {
        let fg = &self.per_class[1..];
        fg.iter().sum::<f64>() / fg.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DscReport {
    pub volumes: Vec<VolumeDsc>,
    /// Mean foreground DSC over abnormal volumes, if any.
    pub dsc_a: Option<f64>,
    /// Mean foreground DSC over normal volumes, if any.
    pub dsc_n: Option<f64>,
    /// Mean foreground DSC over all volumes.
    pub avg: f64,
}

/// Volume mean of foreground class means, overall and per subset.
pub fn aggregate(volumes: Vec<VolumeDsc>) -> Result<DscReport> {
    if volumes.is_empty() {
        return Err(Error::EmptyDataset("evaluation"));
    }
    if volumes.iter().any(|v| v.per_class.len() < 2) {
        return Err(Error::InvalidConfig("DSC report needs at least one foreground class"));
    }
    let mean_of = |filter: &dyn Fn(&VolumeDsc) -> bool| {
        let picked: Vec<f64> = volumes.iter().filter(|v| filter(v)).map(VolumeDsc::foreground_mean).collect();
        if picked.is_empty() {
            None
        } else {
            Some(picked.iter().sum::<f64>() / picked.len() as f64)
        }
    };
    let dsc_a = mean_of(&|v| v.subset == Some(Subset::Abnormal));
    let dsc_n = mean_of(&|v| v.subset == Some(Subset::Normal));
    let avg = mean_of(&|_| true).expect("non-empty");
    Ok(DscReport {
        volumes,
        dsc_a,
        dsc_n,
        avg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;
    use alloc::string::ToString;
    use alloc::vec;

    fn lm(data: Vec<u8>) -> LabelMap {
        LabelMap::new(Dims::cube(2), data).unwrap()
    }

    #[test]
    fn identical_maps_score_one() {
        let a = lm(vec![0, 1, 2, 1, 0, 0, 2, 2]);
        assert_eq!(dsc(&a, &a, 4).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn hand_counted_overlap() {
        // Class 1: pred {0,1,2,3}, gt {2,3,4,5}, overlap {2,3}.
        let pred = lm(vec![1, 1, 1, 1, 0, 0, 0, 0]);
        let gt = lm(vec![0, 0, 1, 1, 1, 1, 0, 0]);
        let d = dsc(&pred, &gt, 3).unwrap();
        assert_eq!(d[1], 0.5);
        assert_eq!(d[2], 1.0);
        assert_eq!(d, dsc(&gt, &pred, 3).unwrap());
    }

    #[test]
    fn one_sided_empty_scores_zero() {
        let pred = lm(vec![2, 0, 0, 0, 0, 0, 0, 0]);
        let gt = lm(vec![0; 8]);
        assert_eq!(dsc(&pred, &gt, 3).unwrap()[2], 0.0);
    }

    #[test]
    fn dims_mismatch_rejected() {
        let a = lm(vec![0; 8]);
        let b = LabelMap::new(Dims::cube(1), vec![0]).unwrap();
        assert!(dsc(&a, &b, 2).is_err());
    }

    fn vol(name: &str, subset: Option<Subset>, per_class: Vec<f64>) -> VolumeDsc {
        VolumeDsc {
            name: name.to_string(),
            subset,
            per_class,
        }
    }

    #[test]
    fn aggregate_single_normal() {
        let r = aggregate(vec![vol("a", Some(Subset::Normal), vec![0.99, 0.8, 0.6, 1.0])]).unwrap();
        assert!((r.dsc_n.unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(r.dsc_a, None);
        assert!((r.avg - 0.8).abs() < 1e-12);
    }

    #[test]
    fn aggregate_subsets() {
        let r = aggregate(vec![
            vol("a", Some(Subset::Abnormal), vec![1.0, 0.7, 0.7, 0.7]),
            vol("b", Some(Subset::Normal), vec![1.0, 0.9, 0.9, 0.9]),
        ])
        .unwrap();
        assert!((r.dsc_a.unwrap() - 0.7).abs() < 1e-12);
        assert!((r.dsc_n.unwrap() - 0.9).abs() < 1e-12);
        assert!((r.avg - 0.8).abs() < 1e-12);

        let same = aggregate(vec![vol("x", None, vec![1.0, 0.5, 0.25]); 3]).unwrap();
        assert_eq!(same.avg, 0.375);
        assert!(aggregate(Vec::new()).is_err());
    }

    #[test]
    fn subset_parse() {
        assert_eq!("abnormal".parse::<Subset>(), Ok(Subset::Abnormal));
        assert!("-".parse::<Subset>().is_err());
        assert_eq!(Subset::Normal.to_string(), "normal");
    }
}
