"""Physics-informed identification of Hill-type muscle models from enveloped sEMG.

The package couples a small feed-forward network (joint-angle regression from
EMG envelopes) with a differentiable musculotendon model and a 1-DOF forward
dynamics residual, so that muscle forces and subject-specific muscle
parameters can be learned without any force labels.
"""

__version__ = "0.1.0"
