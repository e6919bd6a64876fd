# Experiment driver for tunnelscope
