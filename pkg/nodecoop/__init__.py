APP_NAME = "nodecoop"
MODULE_NAME = __name__

# written into archived runs; bump when the CSV layout changes
FORMAT_VERSION = "1"
