"""vinsim: simulator, estimator, and sensitivity-analysis toolkit for
vision-aided inertial navigation with slowly drifting IMU biases."""

__version__ = "0.1.0"
