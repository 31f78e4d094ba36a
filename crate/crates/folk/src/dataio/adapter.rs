use super::{
    invalid, meta_str, meta_usize, read_container_of_kind, write_container, ArrayData, Container,
    DataError, Result,
};
use folk_core::student::{Activation, AdapterParams, OptimizerState};
use serde_json::{json, Value};
use std::path::Path;

pub const ADAPTER_KIND: &str = "adapter";

pub fn adapter_to_container(p: &AdapterParams, config: &Value) -> Container {
    let mut c = Container::new(
        ADAPTER_KIND,
        json!({
            "input_dim": p.input_dim,
            "hidden_dim": p.hidden_dim,
            "output_dim": p.output_dim,
            "activation": p.activation.name(),
            "optimizer_step": p.optimizer.step,
            "config": config,
        }),
    );
    c.insert("adapter.w1", vec![p.hidden_dim, p.input_dim], ArrayData::F64(p.w1.clone()));
    c.insert("adapter.b1", vec![p.hidden_dim], ArrayData::F64(p.b1.clone()));
    c.insert("adapter.w2", vec![p.output_dim, p.hidden_dim], ArrayData::F64(p.w2.clone()));
    c.insert("adapter.b2", vec![p.output_dim], ArrayData::F64(p.b2.clone()));
    let n = p.num_params();
    c.insert("adapter.adam_m", vec![n], ArrayData::F64(p.optimizer.first_moment.clone()));
    c.insert("adapter.adam_v", vec![n], ArrayData::F64(p.optimizer.second_moment.clone()));
    c
}

pub fn adapter_from_container(c: &Container) -> Result<AdapterParams> {
    let fi = meta_usize(&c.meta, "input_dim")?;
    let hd = meta_usize(&c.meta, "hidden_dim")?;
    let od = meta_usize(&c.meta, "output_dim")?;
    let activation = match meta_str(&c.meta, "activation")? {
        "relu" => Activation::Relu,
        other => return Err(invalid("meta.activation", format!("unsupported {other:?}"))),
    };
    let step = c
        .meta
        .get("optimizer_step")
        .and_then(Value::as_u64)
        .ok_or_else(|| invalid("meta.optimizer_step", "missing"))?;
    let get = |name: &str, shape: &[Option<usize>]| -> Result<Vec<f64>> {
        Ok(c.f64s(name, shape)?.1.to_vec())
    };
    let n = hd * fi + hd + od * hd + od;
    let p = AdapterParams {
        input_dim: fi,
        hidden_dim: hd,
        output_dim: od,
        w1: get("adapter.w1", &[Some(hd), Some(fi)])?,
        b1: get("adapter.b1", &[Some(hd)])?,
        w2: get("adapter.w2", &[Some(od), Some(hd)])?,
        b2: get("adapter.b2", &[Some(od)])?,
        activation,
        optimizer: OptimizerState {
            first_moment: get("adapter.adam_m", &[Some(n)])?,
            second_moment: get("adapter.adam_v", &[Some(n)])?,
            step,
        },
    };
    p.validate().map_err(|source| DataError::Core {
        context: "adapter".into(),
        source,
    })?;
    Ok(p)
}

pub fn write_adapter(p: &AdapterParams, config: &Value, dir: &Path) -> Result<()> {
    write_container(&adapter_to_container(p, config), dir)
}

pub fn read_adapter(dir: &Path) -> Result<AdapterParams> {
    adapter_from_container(&read_container_of_kind(dir, ADAPTER_KIND)?)
}
