//! Sample metadata shared by training, scoring and evaluation.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::Data(format!(concat!("unknown ", stringify!($name), " '{}'"), s))),
                }
            }
        }
    };
}

text_enum!(Domain { Source => "source", Target => "target" });
text_enum!(Split { Train => "train", Test => "test" });
text_enum!(Label { Normal => "normal", Anomalous => "anomalous", Unknown => "unknown" });
