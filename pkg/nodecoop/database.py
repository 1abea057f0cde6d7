from peewee import Model, TextField, UUIDField, SqliteDatabase, ForeignKeyField, CharField, IntegerField

db_connection = SqliteDatabase(None, autoconnect=False)


class BaseModel(Model):
    class Meta:
        database = db_connection


class DbRun(BaseModel):
    uuid = UUIDField(unique=True)
    format_version = CharField(max_length=8)
    command = CharField(max_length=16)
    parameters = TextField()
    output = TextField()
    row_count = IntegerField()


class DbRunRow(BaseModel):
    run = ForeignKeyField(DbRun, backref="rows", on_delete="CASCADE", on_update="CASCADE")
    index = IntegerField()
    text = TextField()


def open_archive(file: str):
    """Bind the archive to ``file`` and create the tables if needed."""
    db_connection.init(file, pragmas={"foreign_keys": 1})
    with db_connection.connection_context():
        db_connection.create_tables([DbRun, DbRunRow])
