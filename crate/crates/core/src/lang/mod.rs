//! Text branch: frozen class-description embeddings and the alignment loss.
//! Used only during training; inference never touches this module.

mod embeddings;
mod loss;

pub use embeddings::{load_embeddings, pseudo_embeddings, ClassEmbeddings, EmbeddingSource};
pub use loss::{alignment_stats, cosine_contrastive_loss, project_visual, total_loss, AlignmentStats, COSINE_EPS};

use crate::classes::CANONICAL;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassDescription {
    pub class_id: usize,
    pub name: &'static str,
    pub text: &'static str,
}

const TEXTS: [&str; 4] = [
    "Arm flapping is one of the stimming behaviors that involve the repetitive movement of the arms and hands. \
     It's often used as a way to release excess energy or stimulate the senses.",
    "Head Banging is a self-injurious behavior for children with autism spectrum disorder children who are \
     sensitive to noise are often aggressive and will hit their heads to distract themselves from the pain.",
    "Spinning one\u{2019}s own body may present as full body spinning. Autistic children may enjoy sitting in a \
     chair or standing and being spun as quickly as possible.",
    "Finger flicking is a repeated movement involving fingers using an almost \u{201c}snapping\u{201d} motion. \
     The repetitive motion of finger flicking close to the face lets the child know where their body is in \
     relation to space and other objects",
];

/// Description text of each behavior, in canonical class order.
pub fn builtin_descriptions() -> Vec<ClassDescription> {
    CANONICAL
        .iter()
        .zip(TEXTS)
        .enumerate()
        .map(|(class_id, (&name, text))| ClassDescription { class_id, name, text })
        .collect()
}
