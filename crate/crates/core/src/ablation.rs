//! Configuration ladders mirroring the ablation tables, trained under one shared budget.

use std::fmt::Write as _;

use crate::attention::AttentionKind;
use crate::error::{Error, Result};
use crate::hazegen::DatasetItem;
use crate::network::ModelConfig;
use crate::training::{train_loop, TrainConfig, TrainOutputs};

/// Table 1: shallow layers only, adding attention, CoT, and AFF in turn.
/// Table 3: full model with SHA pooling/shuffle/restore-kernel variants.
/// Table 4: shallow only, plus deep layers, plus the density map.
pub fn ladder(table: u8, base: ModelConfig) -> Result<Vec<(&'static str, ModelConfig)>> {
    let shallow = ModelConfig {
        use_deep: false,
        use_density: false,
        ..base
    };
    let plain = ModelConfig {
        attention: AttentionKind::None,
        use_cot: false,
        use_aff: false,
        ..shallow
    };
    let sha = |maxpool, shuffle, kernel| ModelConfig {
        sha_maxpool: maxpool,
        sha_shuffle: shuffle,
        sha_restore_kernel: kernel,
        ..base
    };
    Ok(match table {
        1 => vec![
            ("base", plain),
            ("+fa", ModelConfig { attention: AttentionKind::Fa, ..plain }),
            ("+sha", ModelConfig { attention: AttentionKind::Sha, ..plain }),
            ("+cot", ModelConfig { attention: AttentionKind::Sha, use_cot: true, ..plain }),
            ("+aff", ModelConfig { attention: AttentionKind::Sha, use_cot: true, use_aff: true, ..plain }),
        ],
        3 => vec![
            ("avg", sha(false, false, 3)),
            ("avg+max", sha(true, false, 3)),
            ("avg+max+shuffle", sha(true, true, 3)),
            ("restore_k1", sha(true, true, 1)),
        ],
        4 => vec![
            ("shallow", shallow),
            ("shallow+deep", ModelConfig { use_deep: true, use_density: false, ..base }),
            ("shallow+deep+density", ModelConfig { use_deep: true, use_density: true, ..base }),
        ],
        t => return Err(Error::InvalidArgument(format!("no ablation table {t}; expected 1, 3 or 4"))),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: &'static str,
    pub final_loss: f64,
    pub psnr: f64,
    pub params: usize,
}

pub const ABLATION_HEADER: &str = "config\tparams\tloss\tpsnr";

pub fn run_ablation(table: u8, base: ModelConfig, items: &[DatasetItem], cfg: &TrainConfig) -> Result<Vec<AblationRow>> {
    ladder(table, base)?
        .into_iter()
        .map(|(label, model)| {
            let r = train_loop(model, items, cfg, &TrainOutputs::default())?;
            Ok(AblationRow {
                label,
                final_loss: r.final_loss,
                psnr: r.final_psnr,
                params: r.store.num_elements(),
            })
        })
        .collect()
}

pub fn to_tsv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{:.6}\t{:.4}", r.label, r.params, r.final_loss, r.psnr);
    }
    s
}
