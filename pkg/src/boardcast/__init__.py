"""boardcast: hourly ED boarding-time forecasting platform.

Library + CLI covering synthetic corpus generation, hourly feature
engineering, window-tensor datasets, linear forecasters with multi-horizon
evaluation, and a drift-monitored forecasting service with retraining.
"""

__version__ = "0.1.0"
