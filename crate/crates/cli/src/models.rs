//! The on-disk layout of a trained toy model directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use noisy_channel::decoder::Scorers;
use noisy_channel::pipeline::ToyModels;
use noisy_channel::scorers::{
    make_reversed_direct, ChannelModel, DirectModel, DirectScorer, LexiconTable, NGramTable,
    ReversedDirect,
};
use noisy_channel::vocab::Vocabulary;

use crate::{ChannelKind, Usage};

const FILES: [&str; 7] = [
    "source.vocab",
    "target.vocab",
    "direct.lex",
    "channel.lex",
    "prefix-channel.lex",
    "reverse.lex",
    "lm.ngram",
];

pub struct ModelDir {
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
    pub direct: DirectModel,
    pub channel: ChannelModel,
    pub prefix_channel: ChannelModel,
    pub reverse: ReversedDirect,
    pub lm: NGramTable,
}

/// Fails with a usage error when `path` does not exist.
pub fn existing(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Usage(format!("no such file or directory: {}", path.display())).into())
    }
}

/// Checks that `dir` holds every model file, before any work starts.
pub fn check_dir(dir: &Path) -> Result<()> {
    existing(dir)?;
    for name in FILES {
        existing(&dir.join(name))?;
    }
    Ok(())
}

pub fn save(
    dir: &Path,
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    models: &ToyModels,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = |name: &str| -> PathBuf { dir.join(name) };
    source_vocab.write(path(FILES[0]))?;
    target_vocab.write(path(FILES[1]))?;
    models.direct.table().write(path(FILES[2]))?;
    models.channel.table().write(path(FILES[3]))?;
    models.prefix_channel.table().write(path(FILES[4]))?;
    models.reverse_direct.table().write(path(FILES[5]))?;
    models.lm.write(path(FILES[6]))?;
    Ok(())
}

impl ModelDir {
    pub fn load(dir: &Path) -> Result<Self> {
        check_dir(dir)?;
        let read = |name: &str| -> Result<LexiconTable> {
            LexiconTable::read(dir.join(name))
                .with_context(|| format!("reading {}", dir.join(name).display()))
        };
        let reverse: Arc<dyn DirectScorer> = Arc::new(DirectModel::new(read(FILES[5])?)?);
        Ok(ModelDir {
            source_vocab: Vocabulary::read(dir.join(FILES[0]))
                .context("reading source vocabulary")?,
            target_vocab: Vocabulary::read(dir.join(FILES[1]))
                .context("reading target vocabulary")?,
            direct: DirectModel::new(read(FILES[2])?)?,
            channel: ChannelModel::new(read(FILES[3])?)?,
            prefix_channel: ChannelModel::new(read(FILES[4])?)?,
            reverse: make_reversed_direct(reverse),
            lm: NGramTable::read(dir.join(FILES[6])).context("reading language model")?,
        })
    }

    pub fn channel(&self, kind: ChannelKind) -> &ChannelModel {
        match kind {
            ChannelKind::Full => &self.channel,
            ChannelKind::Prefix => &self.prefix_channel,
        }
    }

    /// Every local scorer, with the chosen channel.
    pub fn scorers(&self, kind: ChannelKind) -> Scorers<'_> {
        Scorers::noisy_channel(&self.direct, self.channel(kind), &self.lm)
            .with_reverse(&self.reverse)
    }
}
