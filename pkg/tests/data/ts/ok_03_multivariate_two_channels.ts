@problemName Multi2
@univariate false
@dimensions 2
@classLabel true A B
@data
1,2:3,4:A
5,6:7,8:B
