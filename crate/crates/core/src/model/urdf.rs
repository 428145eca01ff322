//! URDF subset: `robot`, `link`, and `joint` elements with `parent`, `child`,
//! `origin`, `axis`, and `limit` children. Revolute, continuous, and fixed
//! joints on a single unbranched chain are accepted; everything else in the
//! document (visual, inertial, collision, transmission, ...) is ignored.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use roxmltree::{Document, Node};

use super::{JointKind, JointSpec, Limits, RobotModel};
use crate::error::{IkError, Result};

/// Parses a URDF document, placing the end effector at the chain's leaf link.
pub fn parse_robot(text: &str) -> Result<RobotModel> {
    parse_robot_with_tip(text, None)
}

/// Parses a URDF document with an explicit end-effector link. Joints past the
/// tip link are dropped.
pub fn parse_robot_with_tip(text: &str, tip_link: Option<&str>) -> Result<RobotModel> {
    let doc = Document::parse(text).map_err(|e| IkError::Parse {
        line: e.pos().row,
        element: "document".into(),
        message: e.to_string(),
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "robot" {
        return Err(parse_err(&doc, root, "root element must be <robot>"));
    }
    let robot_name = root.attribute("name").unwrap_or("robot").to_string();

    let mut links = Vec::new();
    let mut raw_joints = Vec::new();
    for node in root.children().filter(Node::is_element) {
        match node.tag_name().name() {
            "link" => links.push(required_attr(&doc, node, "name")?.to_string()),
            "joint" => raw_joints.push(parse_joint(&doc, node)?),
            _ => {}
        }
    }

    for raw in &raw_joints {
        for link in [&raw.parent, &raw.child] {
            if !links.contains(link) {
                return Err(IkError::Parse {
                    line: raw.line,
                    element: "joint".into(),
                    message: format!("joint `{}` references unknown link `{link}`", raw.name),
                });
            }
        }
    }

    let mut children: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut has_parent: HashMap<&str, usize> = HashMap::new();
    for (i, raw) in raw_joints.iter().enumerate() {
        children.entry(raw.parent.as_str()).or_default().push(i);
        if has_parent.insert(raw.child.as_str(), i).is_some() {
            return Err(IkError::InvalidModel(format!(
                "link `{}` has more than one parent joint",
                raw.child
            )));
        }
    }
    if let Some((link, kids)) = children.iter().find(|(_, kids)| kids.len() > 1) {
        return Err(IkError::BranchingTree {
            link: link.to_string(),
            children: kids.len(),
        });
    }

    let roots: Vec<&String> = links
        .iter()
        .filter(|l| !has_parent.contains_key(l.as_str()))
        .collect();
    let base = match roots.as_slice() {
        [one] => one.as_str(),
        [] => return Err(IkError::InvalidModel("kinematic chain has a cycle".into())),
        _ => {
            return Err(IkError::InvalidModel(format!(
                "chain is disconnected: {} root links",
                roots.len()
            )))
        }
    };

    if let Some(tip) = tip_link {
        if !links.iter().any(|l| l == tip) {
            return Err(IkError::InvalidModel(format!("tip link `{tip}` not found")));
        }
    }

    // Walk from the base along the unique child joints.
    let mut path = Vec::new();
    let mut link = base;
    while tip_link != Some(link) {
        match children.get(link).map(Vec::as_slice) {
            Some([j]) => {
                path.push(*j);
                link = raw_joints[*j].child.as_str();
            }
            _ => break,
        }
    }
    if let Some(tip) = tip_link {
        if link != tip {
            return Err(IkError::InvalidModel(format!(
                "tip link `{tip}` is not on the chain from `{base}`"
            )));
        }
    }

    let mut joints: Vec<JointSpec> = path.iter().map(|&j| raw_joints[j].spec.clone()).collect();
    let last_revolute = joints
        .iter()
        .rposition(JointSpec::is_revolute)
        .ok_or_else(|| IkError::InvalidModel("chain has no revolute joints".into()))?;
    let ee_offset = joints
        .drain(last_revolute + 1..)
        .fold(Isometry3::identity(), |acc, j| acc * j.origin);

    RobotModel::new(robot_name, joints, ee_offset)
}

struct RawJoint {
    name: String,
    parent: String,
    child: String,
    line: u32,
    spec: JointSpec,
}

fn parse_joint(doc: &Document, node: Node) -> Result<RawJoint> {
    let name = required_attr(doc, node, "name")?.to_string();
    let kind = required_attr(doc, node, "type")?;
    let line = doc.text_pos_at(node.range().start).row;

    let parent = child_attr(doc, node, "parent", "link")?;
    let child = child_attr(doc, node, "child", "link")?;

    let origin = match element(node, "origin") {
        Some(o) => {
            let xyz = vec3_attr(doc, o, "xyz")?.unwrap_or_else(Vector3::zeros);
            let rpy = vec3_attr(doc, o, "rpy")?.unwrap_or_else(Vector3::zeros);
            Isometry3::from_parts(
                Translation3::from(xyz),
                UnitQuaternion::from_euler_angles(rpy.x, rpy.y, rpy.z),
            )
        }
        None => Isometry3::identity(),
    };

    let spec = match kind {
        "fixed" => JointSpec::fixed(name.clone(), origin),
        "revolute" | "continuous" => {
            let axis = match element(node, "axis") {
                Some(a) => vec3_attr(doc, a, "xyz")?.unwrap_or_else(Vector3::x),
                None => Vector3::x(),
            };
            let limits = if kind == "continuous" {
                Limits::full_turn()
            } else {
                let limit = element(node, "limit")
                    .ok_or_else(|| IkError::MissingLimits { joint: name.clone() })?;
                let lower = float_attr(doc, limit, "lower")?;
                let upper = float_attr(doc, limit, "upper")?;
                match (lower, upper) {
                    (Some(lower), Some(upper)) => Limits::new(lower, upper)
                        .map_err(|e| parse_err(doc, limit, &e.to_string()))?,
                    _ => return Err(IkError::MissingLimits { joint: name }),
                }
            };
            JointSpec::revolute(name.clone(), origin, axis, limits)
                .map_err(|e| parse_err(doc, node, &e.to_string()))?
        }
        other => {
            return Err(IkError::UnsupportedJointKind {
                joint: name,
                kind: other.to_string(),
            })
        }
    };

    Ok(RawJoint {
        name,
        parent,
        child,
        line,
        spec,
    })
}

fn parse_err(doc: &Document, node: Node, message: &str) -> IkError {
    IkError::Parse {
        line: doc.text_pos_at(node.range().start).row,
        element: node.tag_name().name().to_string(),
        message: message.to_string(),
    }
}

fn element<'a, 'input>(node: Node<'a, 'input>, tag: &str) -> Option<Node<'a, 'input>> {
    node.children()
        .find(|c| c.is_element() && c.tag_name().name() == tag)
}

fn required_attr<'a>(doc: &Document, node: Node<'a, '_>, key: &str) -> Result<&'a str> {
    node.attribute(key)
        .ok_or_else(|| parse_err(doc, node, &format!("missing attribute `{key}`")))
}

fn child_attr(doc: &Document, node: Node, tag: &str, key: &str) -> Result<String> {
    let child = element(node, tag)
        .ok_or_else(|| parse_err(doc, node, &format!("missing <{tag}> element")))?;
    Ok(required_attr(doc, child, key)?.to_string())
}

fn float_attr(doc: &Document, node: Node, key: &str) -> Result<Option<f64>> {
    node.attribute(key)
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| parse_err(doc, node, &format!("`{key}` is not a number: `{v}`")))
        })
        .transpose()
}

fn vec3_attr(doc: &Document, node: Node, key: &str) -> Result<Option<Vector3<f64>>> {
    let Some(text) = node.attribute(key) else {
        return Ok(None);
    };
    let values: std::result::Result<Vec<f64>, _> =
        text.split_whitespace().map(str::parse::<f64>).collect();
    match values {
        Ok(v) if v.len() == 3 => Ok(Some(Vector3::new(v[0], v[1], v[2]))),
        _ => Err(parse_err(
            doc,
            node,
            &format!("`{key}` must hold three numbers, got `{text}`"),
        )),
    }
}

/// Writes `model` back out as URDF. The end-effector offset becomes a fixed
/// joint to a link named `ee_link`, so re-parsing yields an equal model.
pub fn to_urdf_string(model: &RobotModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "<?xml version=\"1.0\"?>");
    let _ = writeln!(out, "<robot name=\"{}\">", escape(model.name()));
    let n = model.joints().len();
    let link_name = |i: usize| {
        if i == 0 {
            "base_link".to_string()
        } else if i == n + 1 {
            "ee_link".to_string()
        } else {
            format!("link{i}")
        }
    };
    for i in 0..=n + 1 {
        let _ = writeln!(out, "  <link name=\"{}\"/>", link_name(i));
    }
    let emit = |out: &mut String, name: &str, kind: &str, i: usize, origin: &Isometry3<f64>| {
        let t = origin.translation.vector;
        let (r, p, y) = origin.rotation.euler_angles();
        let _ = writeln!(out, "  <joint name=\"{}\" type=\"{kind}\">", escape(name));
        let _ = writeln!(out, "    <parent link=\"{}\"/>", link_name(i));
        let _ = writeln!(out, "    <child link=\"{}\"/>", link_name(i + 1));
        let _ = writeln!(
            out,
            "    <origin xyz=\"{:?} {:?} {:?}\" rpy=\"{:?} {:?} {:?}\"/>",
            t.x, t.y, t.z, r, p, y
        );
    };
    for (i, joint) in model.joints().iter().enumerate() {
        match &joint.kind {
            JointKind::Fixed => {
                emit(&mut out, &joint.name, "fixed", i, &joint.origin);
            }
            JointKind::Revolute { axis, limits } => {
                emit(&mut out, &joint.name, "revolute", i, &joint.origin);
                let _ = writeln!(
                    out,
                    "    <axis xyz=\"{:?} {:?} {:?}\"/>",
                    axis.x, axis.y, axis.z
                );
                let _ = writeln!(
                    out,
                    "    <limit lower=\"{:?}\" upper=\"{:?}\"/>",
                    limits.lower, limits.upper
                );
            }
        }
        out.push_str("  </joint>\n");
    }
    emit(&mut out, "ee_joint", "fixed", n, model.ee_offset());
    out.push_str("  </joint>\n</robot>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;
    use std::f64::consts::PI;

    const MINIMAL: &str = r#"<robot name="mini">
  <link name="base"/>
  <link name="l1"/>
  <link name="tip"/>
  <joint name="j1" type="revolute">
    <parent link="base"/>
    <child link="l1"/>
    <axis xyz="0 0 1"/>
    <limit lower="-3.141592653589793" upper="3.141592653589793"/>
  </joint>
  <joint name="tip_joint" type="fixed">
    <parent link="l1"/>
    <child link="tip"/>
    <origin xyz="1 0 0"/>
  </joint>
</robot>"#;

    #[test]
    fn minimal_chain() {
        let m = parse_robot(MINIMAL).unwrap();
        assert_eq!(m.dof(), 1);
        assert_eq!(m.joints().len(), 1);
        assert_eq!(m.limits()[0], Limits::new(-PI, PI).unwrap());
        assert_eq!(m.ee_offset().translation.vector, Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn panda_has_seven_dof() {
        let m = parse_robot(builtin::PANDA_URDF).unwrap();
        assert_eq!(m.dof(), 7);
        assert_eq!(m.joints()[0].name, "panda_joint1");
        // link8 and hand offsets folded into the tip
        assert!((m.ee_offset().translation.vector.z - 0.107).abs() < 1e-15);
    }

    #[test]
    fn continuous_becomes_full_turn() {
        let m = parse_robot(builtin::FETCH_ARM_URDF).unwrap();
        assert_eq!(m.limits()[2], Limits::full_turn());
    }

    #[test]
    fn rejects_prismatic() {
        let doc = MINIMAL.replace("type=\"revolute\"", "type=\"prismatic\"");
        let err = parse_robot(&doc).unwrap_err();
        assert!(matches!(err, IkError::UnsupportedJointKind { ref kind, .. } if kind == "prismatic"));
        assert!(err.to_string().contains("unsupported joint kind"));
    }

    #[test]
    fn rejects_missing_limits() {
        let doc = MINIMAL.replace(
            "<limit lower=\"-3.141592653589793\" upper=\"3.141592653589793\"/>",
            "",
        );
        assert_eq!(
            parse_robot(&doc).unwrap_err(),
            IkError::MissingLimits { joint: "j1".into() }
        );
        let doc = MINIMAL.replace("lower=\"-3.141592653589793\"", "");
        assert!(matches!(parse_robot(&doc), Err(IkError::MissingLimits { .. })));
    }

    #[test]
    fn rejects_branching() {
        let doc = MINIMAL.replace(
            "</robot>",
            r#"<link name="other"/>
  <joint name="j2" type="fixed"><parent link="l1"/><child link="other"/></joint>
</robot>"#,
        );
        assert!(matches!(
            parse_robot(&doc),
            Err(IkError::BranchingTree { ref link, children: 2 }) if link == "l1"
        ));
    }

    #[test]
    fn malformed_xml_reports_line() {
        let err = parse_robot("<robot>\n<link name=\"a\">\n</robot>").unwrap_err();
        match err {
            IkError::Parse { line, .. } => assert!(line >= 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_element_line() {
        let doc = MINIMAL.replace("upper=\"3.141592653589793\"", "upper=\"pi\"");
        match parse_robot(&doc).unwrap_err() {
            IkError::Parse { line, element, .. } => {
                assert_eq!(line, 9);
                assert_eq!(element, "limit");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn explicit_tip_truncates_chain() {
        let m = parse_robot_with_tip(builtin::PANDA_URDF, Some("panda_link7")).unwrap();
        assert_eq!(m.dof(), 7);
        assert_eq!(m.ee_offset(), &Isometry3::identity());
        let m = parse_robot_with_tip(builtin::PANDA_URDF, Some("panda_link4")).unwrap();
        assert_eq!(m.dof(), 4);
        assert!(parse_robot_with_tip(builtin::PANDA_URDF, Some("nope")).is_err());
    }

    #[test]
    fn unknown_link_reference() {
        let doc = MINIMAL.replace("<child link=\"l1\"/>", "<child link=\"ghost\"/>");
        assert!(matches!(parse_robot(&doc), Err(IkError::Parse { .. })));
    }

    #[test]
    fn round_trip_builtins() {
        for m in [builtin::panda(), builtin::fetch_arm()] {
            let again = parse_robot(&to_urdf_string(&m)).unwrap();
            assert!(m.approx_eq(&again, 1e-12), "{} did not round-trip", m.name());
        }
    }
}
