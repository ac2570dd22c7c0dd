"""Hierarchically connected sphere-constrained classification layers in numpy."""
from .hierarchy import (HierarchyError, HierarchyTree, Node, NodePath, dag_to_tree, depth,
                        merge_single_child_chains, parse_hierarchy_file, random_hierarchy, read_hierarchy_pairs,
                        serialize_hierarchy, validate_tree, write_hierarchy_file)
from .layer import (HierarchicalLayer, RadiusSpec, build_D, build_H, compose_W, oracle_W,
                    parent_level_W)
from .sphere import (RetractionError, project_tangent, projected_step, random_sphere_point,
                     retract, rsgd_step)
from .model import HierSphereModel, VARIANTS
from .data import LabeledDataset, SyntheticSpec, generate, load_csv, save_csv
from .training import (MetricsRecord, TrainConfig, evaluate, grad_check, radius_sweep,
                       random_hierarchy_ablation, train)

__version__ = "0.1.0"
