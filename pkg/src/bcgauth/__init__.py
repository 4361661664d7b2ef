"""BCG wearer verification from head-mounted accelerometer/gyroscope streams."""
