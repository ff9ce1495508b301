//! Label vocabulary shared by the simulator, the synthetic embedder and the
//! evaluation code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved label for pixels that hit nothing.
pub const BACKGROUND: &str = "background";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelGroup {
    /// Discrete objects (furniture, appliances).
    Object,
    /// Rooms and regions, painted on floors and walls.
    Room,
    Reserved,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub name: String,
    pub group: LabelGroup,
}

/// Ordered, unique label list. Id 0 is always [`BACKGROUND`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    labels: Vec<Label>,
}

impl LabelVocabulary {
    /// Validates uniqueness (case-insensitive) and prepends the background
    /// label when missing.
    pub fn new(labels: Vec<Label>) -> Result<Self> {
        let mut all = Vec::with_capacity(labels.len() + 1);
        if labels.first().map(|l| l.name.as_str()) != Some(BACKGROUND) {
            all.push(Label {
                name: BACKGROUND.into(),
                group: LabelGroup::Reserved,
            });
        }
        all.extend(labels);
        for (i, l) in all.iter().enumerate() {
            if l.name.trim().is_empty() {
                return Err(Error::Config("empty label name".into()));
            }
            if all[..i].iter().any(|o| o.name.eq_ignore_ascii_case(&l.name)) {
                return Err(Error::Config(format!("duplicate label {:?}", l.name)));
            }
            if i > 0 && l.name == BACKGROUND {
                return Err(Error::Config("background must be the first label".into()));
            }
        }
        if all.len() > u16::MAX as usize {
            return Err(Error::Config("too many labels".into()));
        }
        Ok(Self { labels: all })
    }

    pub fn from_names(objects: &[&str], rooms: &[&str]) -> Result<Self> {
        let mk = |names: &[&str], group| {
            names
                .iter()
                .map(move |n| Label {
                    name: n.to_string(),
                    group,
                })
                .collect::<Vec<_>>()
        };
        let mut labels = mk(objects, LabelGroup::Object);
        labels.extend(mk(rooms, LabelGroup::Room));
        Self::new(labels)
    }

    /// Vocabulary covering every label used by the bundled worlds.
    pub fn standard() -> Self {
        Self::from_names(
            &[
                "bed",
                "chair",
                "sofa",
                "toilet",
                "table",
                "tv",
                "sink",
                "refrigerator",
                "bathtub",
                "washer",
                "bookshelf",
                "desk",
                "stove",
                "wardrobe",
                "piano",
            ],
            &[
                "kitchen",
                "bathroom",
                "bedroom",
                "living room",
                "hallway",
                "dining room",
                "laundry room",
                "office",
            ],
        )
        .expect("standard vocabulary is valid")
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn get(&self, id: u16) -> Option<&Label> {
        self.labels.get(id as usize)
    }

    pub fn name(&self, id: u16) -> &str {
        self.labels.get(id as usize).map_or(BACKGROUND, |l| &l.name)
    }

    pub fn group(&self, id: u16) -> LabelGroup {
        self.labels
            .get(id as usize)
            .map_or(LabelGroup::Reserved, |l| l.group)
    }

    /// Case-insensitive lookup, ignoring surrounding whitespace.
    pub fn id(&self, name: &str) -> Option<u16> {
        let name = name.trim();
        self.labels
            .iter()
            .position(|l| l.name.eq_ignore_ascii_case(name))
            .map(|i| i as u16)
    }

    pub fn require(&self, name: &str) -> Result<u16> {
        self.id(name)
            .ok_or_else(|| Error::Input(format!("unknown label {name:?}")))
    }

    pub fn background(&self) -> u16 {
        0
    }
}
