#![allow(dead_code)]

pub mod dpm;
pub mod lmm;
pub mod nrmii;
pub mod ts;

#[allow(unused_macros)]
macro_rules! wrap_tests {
    ($module:ident: $($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                audits::$module::$name();
            }
        )*
    };
}
#[allow(unused_imports)]
pub(crate) use wrap_tests;
