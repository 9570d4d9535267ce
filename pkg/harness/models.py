import datetime
import logging
from pathlib import Path
from typing import List, Set, Union

from peewee import (
    CharField,
    DateTimeField,
    IntegerField,
    Model,
    SqliteDatabase,
    TextField,
)

from schemas import RunRecord, RunStatus

logger = logging.getLogger(__name__)

# Bound to a results directory's ledger.db by RunLedger.open
db = SqliteDatabase(None)


class BaseModel(Model):
    class Meta:
        database = db


class InstanceRow(BaseModel):
    """Latest outcome of one game instance."""

    # shortuuid is always 22 chars
    instance_id = CharField(max_length=22, primary_key=True)
    position = IntegerField(index=True)
    model_id = CharField(max_length=100)
    game_id = CharField(max_length=100)
    status = CharField(max_length=20)
    executions = IntegerField(default=1)
    record = TextField()  # RunRecord JSON
    updated_at = DateTimeField(default=datetime.datetime.now)

    def run_record(self) -> RunRecord:
        return RunRecord.model_validate_json(self.record)


class RunLedger:
    """SQLite store of run records, used for resume and the final export."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def open(self) -> "RunLedger":
        db.init(
            str(self.path),
            pragmas={
                "journal_mode": "wal",  # Write-Ahead Logging for concurrent readers
                "synchronous": "normal",
            },
        )
        db.connect(reuse_if_open=True)
        db.create_tables([InstanceRow], safe=True)
        logger.info(f"Opened run ledger at {self.path}")
        return self

    def close(self) -> None:
        if not db.is_closed():
            db.close()

    def __enter__(self) -> "RunLedger":
        return self.open()

    def __exit__(self, *exc) -> None:
        self.close()

    def completed_ids(self) -> Set[str]:
        query = InstanceRow.select(InstanceRow.instance_id).where(
            InstanceRow.status == RunStatus.COMPLETE.value
        )
        return {row.instance_id for row in query}

    def executions(self, instance_id: str) -> int:
        row = InstanceRow.get_or_none(InstanceRow.instance_id == instance_id)
        return row.executions if row else 0

    def save(self, run: RunRecord) -> None:
        """Insert or replace the record of an instance, counting executions."""
        with db.atomic():
            InstanceRow.replace(
                instance_id=run.instance.instance_id,
                position=run.instance.position,
                model_id=run.instance.model_id,
                game_id=run.instance.game_id,
                status=run.status.value,
                executions=self.executions(run.instance.instance_id) + 1,
                record=run.model_dump_json(),
                updated_at=datetime.datetime.now(),
            ).execute()

    def records(self) -> List[RunRecord]:
        query = InstanceRow.select().order_by(InstanceRow.position)
        return [row.run_record() for row in query]
